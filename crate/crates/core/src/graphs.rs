//! Control-flow graphs, dominators, natural loops and the call graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::ir::{CalleeRef, InstrKind, IrFunction, IrModule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("function `{function}`: block `{block}` branches to unknown label `{target}`")]
    UnknownTarget { function: String, block: String, target: String },
}

/// CFG over block ordinals. Node `i` is the function's `i`-th block and
/// node 0 is the entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    labels: Vec<String>,
    successors: Vec<Vec<usize>>,
    predecessors: Vec<Vec<usize>>,
}

impl Cfg {
    /// Builds a CFG directly from adjacency lists. Duplicate targets are
    /// collapsed.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Self {
        let labels = (0..node_count).map(|i| i.to_string()).collect();
        let mut successors = vec![Vec::new(); node_count];
        for &(u, v) in edges {
            assert!(u < node_count && v < node_count, "edge ({u}, {v}) out of range");
            if !successors[u].contains(&v) {
                successors[u].push(v);
            }
        }
        Self::with_successors(labels, successors)
    }

    fn with_successors(labels: Vec<String>, successors: Vec<Vec<usize>>) -> Self {
        let mut predecessors = vec![Vec::new(); labels.len()];
        for (u, succ) in successors.iter().enumerate() {
            for &v in succ {
                predecessors[v].push(u);
            }
        }
        Cfg { labels, successors, predecessors }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn entry(&self) -> usize {
        0
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    pub fn node(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.successors[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.predecessors[node]
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.predecessors[node].len()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.successors[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.successors.iter().enumerate().flat_map(|(u, s)| s.iter().map(move |&v| (u, v)))
    }

    /// Nodes reachable from the entry, in reverse postorder.
    pub fn reverse_postorder(&self) -> Vec<usize> {
        let n = self.node_count();
        if n == 0 {
            return Vec::new();
        }
        let mut visited = vec![false; n];
        let mut post = Vec::with_capacity(n);
        let mut stack = vec![(self.entry(), 0usize)];
        visited[self.entry()] = true;
        while let Some((node, next)) = stack.last_mut() {
            let node = *node;
            if let Some(&succ) = self.successors[node].get(*next) {
                *next += 1;
                if !visited[succ] {
                    visited[succ] = true;
                    stack.push((succ, 0));
                }
            } else {
                post.push(node);
                stack.pop();
            }
        }
        post.reverse();
        post
    }
}

/// Builds the CFG of a defined function. Edges are added once per distinct
/// target of each terminator.
pub fn build_cfg(function: &IrFunction) -> Result<Cfg, GraphError> {
    let index: HashMap<&str, usize> = function.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
    let mut successors = Vec::with_capacity(function.blocks.len());
    for block in &function.blocks {
        let mut succ = Vec::new();
        for target in block.terminator().successors() {
            let &t = index.get(target).ok_or_else(|| GraphError::UnknownTarget {
                function: function.name.clone(),
                block: block.label.clone(),
                target: target.to_string(),
            })?;
            if !succ.contains(&t) {
                succ.push(t);
            }
        }
        successors.push(succ);
    }
    let labels = function.blocks.iter().map(|b| b.label.clone()).collect();
    Ok(Cfg::with_successors(labels, successors))
}

/// Immediate dominators of the nodes reachable from the entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomTree {
    idom: Vec<Option<usize>>,
}

impl DomTree {
    /// `None` for nodes unreachable from the entry. The entry maps to itself.
    pub fn idom(&self, node: usize) -> Option<usize> {
        self.idom[node]
    }

    pub fn is_reachable(&self, node: usize) -> bool {
        self.idom[node].is_some()
    }

    /// True when `a` dominates `b` (reflexive).
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if !self.is_reachable(a) || !self.is_reachable(b) {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            let up = self.idom[cur].unwrap();
            if up == cur {
                return false;
            }
            cur = up;
        }
    }
}

/// Iterative dominator computation over reverse postorder
/// (Cooper, Harvey and Kennedy).
pub fn compute_dominators(cfg: &Cfg) -> DomTree {
    let n = cfg.node_count();
    let rpo = cfg.reverse_postorder();
    let mut order = vec![usize::MAX; n];
    for (i, &node) in rpo.iter().enumerate() {
        order[node] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    if n == 0 {
        return DomTree { idom };
    }
    idom[cfg.entry()] = Some(cfg.entry());

    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].unwrap();
            }
            while order[b] > order[a] {
                b = idom[b].unwrap();
            }
        }
        a
    };

    let mut changed = true;
    while changed {
        changed = false;
        for &node in rpo.iter().skip(1) {
            let mut new_idom = None;
            for &p in cfg.predecessors(node) {
                if idom[p].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new_idom.is_some() && idom[node] != new_idom {
                idom[node] = new_idom;
                changed = true;
            }
        }
    }
    DomTree { idom }
}

/// Number of distinct natural-loop headers: nodes `h` with some reachable
/// edge `t -> h` where `h` dominates `t`.
pub fn count_natural_loops(cfg: &Cfg, dom: &DomTree) -> usize {
    let headers: BTreeSet<usize> =
        cfg.edges().filter(|&(t, h)| dom.is_reachable(t) && dom.dominates(h, t)).map(|(_, h)| h).collect();
    headers.len()
}

/// Corpus-wide call multigraph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    /// One entry per direct call site, sorted canonically.
    pub direct_edges: Vec<(String, String)>,
    pub indirect_sites: BTreeMap<String, usize>,
}

impl CallGraph {
    /// Number of direct call sites targeting `function`.
    pub fn in_degree(&self, function: &str) -> usize {
        self.direct_edges.iter().filter(|(_, callee)| callee == function).count()
    }

    pub fn in_degrees(&self) -> BTreeMap<&str, usize> {
        let mut map = BTreeMap::new();
        for (_, callee) in &self.direct_edges {
            *map.entry(callee.as_str()).or_insert(0) += 1;
        }
        map
    }
}

/// Collects direct call edges and indirect call sites over all modules.
/// The result does not depend on the order of `modules`.
pub fn build_callgraph<'a>(modules: impl IntoIterator<Item = &'a IrModule>) -> CallGraph {
    let mut cg = CallGraph::default();
    for module in modules {
        for function in module.functions.iter().filter(|f| f.is_definition) {
            cg.nodes.insert(function.name.clone());
            for instr in function.blocks.iter().flat_map(|b| &b.instructions) {
                if let InstrKind::Call { callee, .. } = &instr.kind {
                    match callee {
                        CalleeRef::Direct(sym) => cg.direct_edges.push((function.name.clone(), sym.clone())),
                        CalleeRef::Indirect => *cg.indirect_sites.entry(function.name.clone()).or_insert(0) += 1,
                    }
                }
            }
        }
    }
    cg.direct_edges.sort();
    cg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;
    use crate::ir::samples::{S1, S2};

    fn cfg_of(src: &str) -> Cfg {
        let m = parse_module(src, "t.ll").unwrap();
        build_cfg(&m.functions[0]).unwrap()
    }

    fn named_edges(cfg: &Cfg) -> Vec<(String, String)> {
        cfg.edges().map(|(u, v)| (cfg.label(u).to_string(), cfg.label(v).to_string())).collect()
    }

    #[test]
    fn s1_edges() {
        let cfg = cfg_of(S1);
        let e = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert_eq!(named_edges(&cfg), vec![e("entry", "then"), e("entry", "else"), e("then", "end"), e("else", "end")]);
        assert_eq!(cfg.in_degree(cfg.node("end").unwrap()), 2);
    }

    #[test]
    fn single_return_has_no_edges() {
        let cfg = cfg_of("define void @r() {\n  ret void\n}\n");
        assert_eq!(cfg.node_count(), 1);
        assert_eq!(cfg.edge_count(), 0);
    }

    #[test]
    fn s2_self_loop_in_degree() {
        let cfg = cfg_of(S2);
        let lp = cfg.node("loop").unwrap();
        assert_eq!(cfg.successors(lp), &[lp, cfg.node("exit").unwrap()]);
        assert_eq!(cfg.in_degree(lp), 2);
    }

    #[test]
    fn unknown_target_is_an_error() {
        let m = parse_module("define void @u() {\nentry:\n  br label %nowhere\n}\n", "u.ll").unwrap();
        assert!(matches!(build_cfg(&m.functions[0]), Err(GraphError::UnknownTarget { .. })));
    }

    #[test]
    fn dominators_s1_s2_chain() {
        let cfg = cfg_of(S1);
        let dom = compute_dominators(&cfg);
        let n = |l: &str| cfg.node(l).unwrap();
        assert_eq!(dom.idom(n("entry")), Some(n("entry")));
        for l in ["then", "else", "end"] {
            assert_eq!(dom.idom(n(l)), Some(n("entry")), "{l}");
        }

        let cfg = cfg_of(S2);
        let dom = compute_dominators(&cfg);
        let n = |l: &str| cfg.node(l).unwrap();
        assert_eq!(dom.idom(n("loop")), Some(n("entry")));
        assert_eq!(dom.idom(n("exit")), Some(n("loop")));

        let chain = Cfg::from_edges(3, &[(0, 1), (1, 2)]);
        let dom = compute_dominators(&chain);
        assert_eq!(dom.idom(1), Some(0));
        assert_eq!(dom.idom(2), Some(1));
    }

    #[test]
    fn unreachable_nodes_have_no_idom() {
        let cfg = Cfg::from_edges(3, &[(0, 1), (2, 1)]);
        let dom = compute_dominators(&cfg);
        assert_eq!(dom.idom(2), None);
        assert_eq!(dom.idom(1), Some(0));
    }

    #[test]
    fn loop_counts() {
        let cfg = cfg_of(S2);
        assert_eq!(count_natural_loops(&cfg, &compute_dominators(&cfg)), 1);
        let cfg = cfg_of(S1);
        assert_eq!(count_natural_loops(&cfg, &compute_dominators(&cfg)), 0);
        // 0 -> 1 (outer header) -> 2 (inner header) -> 2 | 3 ; 3 -> 1 | exit 4
        let nested = Cfg::from_edges(5, &[(0, 1), (1, 2), (2, 2), (2, 3), (3, 1), (3, 4)]);
        assert_eq!(count_natural_loops(&nested, &compute_dominators(&nested)), 2);
        // Two back edges into one header count once.
        let shared = Cfg::from_edges(4, &[(0, 1), (1, 2), (1, 3), (2, 1), (3, 1)]);
        assert_eq!(count_natural_loops(&shared, &compute_dominators(&shared)), 1);
    }

    #[test]
    fn irreducible_cycle_has_no_header() {
        // 0 -> 1, 0 -> 2, 1 <-> 2: neither 1 nor 2 dominates the other.
        let cfg = Cfg::from_edges(3, &[(0, 1), (0, 2), (1, 2), (2, 1)]);
        assert_eq!(count_natural_loops(&cfg, &compute_dominators(&cfg)), 0);
    }

    const CALLS: &str = "define i32 @main() {
entry:
  %a = call i32 @f()
  %b = call i32 @f()
  %c = call i32 %fp()
  call void @ext()
  ret i32 0
}
define i32 @f() {
  ret i32 1
}
";

    #[test]
    fn callgraph_multiset_and_indirect() {
        let m = parse_module(CALLS, "c.ll").unwrap();
        let cg = build_callgraph([&m]);
        let f_edges = cg.direct_edges.iter().filter(|e| *e == &("main".to_string(), "f".to_string())).count();
        assert_eq!(f_edges, 2);
        assert_eq!(cg.in_degree("f"), 2);
        assert_eq!(cg.in_degree("ext"), 1);
        assert_eq!(cg.indirect_sites.get("main"), Some(&1));
        assert_eq!(cg.direct_edges.len(), 3);

        let none = parse_module(S1, "s1.ll").unwrap();
        assert!(build_callgraph([&none]).direct_edges.is_empty());
    }

    #[test]
    fn callgraph_is_order_independent() {
        let a = parse_module(CALLS, "a.ll").unwrap();
        let b = parse_module("define void @z() {\n  call void @f()\n  ret void\n}\n", "b.ll").unwrap();
        assert_eq!(build_callgraph([&a, &b]), build_callgraph([&b, &a]));
    }
}
