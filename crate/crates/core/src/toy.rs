//! Generated inputs for tests and demos: a small labeled IR corpus in the
//! style of per-CWE test cases, and synthetic feature tables whose label is
//! separable.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{FeatureTable, TableKind};
use crate::features::{BlockFeatures, FunctionFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyCorpusConfig {
    /// Each case is one file holding a `bad` and a `good` function.
    pub cases: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig { cases: 20, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyFile {
    pub file_name: String,
    pub source: String,
}

const PRELUDE: &str = "declare ptr @malloc(i64)
declare ptr @calloc(i64, i64)
declare void @free(ptr)
declare ptr @strcpy(ptr, ptr)
declare i32 @printf(ptr, ...)
declare void @llvm.memcpy.p0.p0.i64(ptr, ptr, i64, i1)
declare void @llvm.memset.p0.i64(ptr, i8, i64, i1)
declare void @may_throw()
declare i32 @__gxx_personality_v0(...)
";

/// Builds one function body block by block.
struct Body<'r> {
    rng: &'r mut ChaCha8Rng,
    out: String,
    next_value: usize,
    next_label: usize,
    /// Likelihood of heap and bulk-memory operations in straight-line code.
    risky: f64,
    personality: bool,
}

impl Body<'_> {
    fn value(&mut self) -> String {
        self.next_value += 1;
        format!("%v{}", self.next_value)
    }

    fn label(&mut self, stem: &str) -> String {
        self.next_label += 1;
        format!("{stem}{}", self.next_label)
    }

    fn line(&mut self, text: &str) {
        let _ = writeln!(self.out, "  {text}");
    }

    fn open(&mut self, label: &str) {
        let _ = writeln!(self.out, "{label}:");
    }

    /// Non-terminator instructions.
    fn straight(&mut self) {
        let n = self.rng.random_range(1..=4);
        for _ in 0..n {
            let roll: f64 = self.rng.random();
            if roll < self.risky * 0.5 {
                let p = self.value();
                let size = self.rng.random_range(8..256);
                self.line(&format!("{p} = call ptr @malloc(i64 {size})"));
                self.line(&format!("call void @llvm.memcpy.p0.p0.i64(ptr {p}, ptr %arg, i64 64, i1 false)"));
            } else if roll < self.risky {
                let p = self.value();
                self.line(&format!("{p} = alloca [16 x i8], align 1"));
                let q = self.value();
                self.line(&format!("{q} = call ptr @strcpy(ptr {p}, ptr %arg)"));
            } else if roll < 0.75 {
                let p = self.value();
                self.line(&format!("{p} = alloca i32, align 4"));
                self.line(&format!("store i32 0, ptr {p}, align 4"));
            } else if roll < 0.85 {
                let a = self.value();
                let k = self.rng.random_range(1..100);
                self.line(&format!("{a} = add nsw i32 %n, {k}"));
            } else if roll < 0.93 {
                let r = self.value();
                self.line(&format!("{r} = call i32 (ptr, ...) @printf(ptr @.fmt, i32 %n)"));
            } else {
                let f = self.value();
                self.line(&format!("{f} = load ptr, ptr @handler, align 8"));
                self.line(&format!("call void {f}(ptr %arg)"));
            }
        }
    }

    /// Emits a structured region that starts in the currently open block and
    /// leaves a new block open.
    fn region(&mut self, depth: usize) {
        self.straight();
        let choice = if depth == 0 { 0 } else { self.rng.random_range(0..6) };
        match choice {
            0 => {}
            1 => {
                let (then, other, join) = (self.label("then"), self.label("else"), self.label("join"));
                let c = self.value();
                let k = self.rng.random_range(0..10);
                self.line(&format!("{c} = icmp sgt i32 %n, {k}"));
                self.line(&format!("br i1 {c}, label %{then}, label %{other}"));
                self.open(&then);
                self.region(depth - 1);
                self.line(&format!("br label %{join}"));
                self.open(&other);
                self.region(depth - 1);
                self.line(&format!("br label %{join}"));
                self.open(&join);
            }
            2 => {
                let (head, body, exit) = (self.label("loop"), self.label("body"), self.label("exit"));
                self.line(&format!("br label %{head}"));
                self.open(&head);
                let c = self.value();
                self.line(&format!("{c} = icmp slt i32 %n, 16"));
                self.line(&format!("br i1 {c}, label %{body}, label %{exit}"));
                self.open(&body);
                self.region(depth - 1);
                self.line(&format!("br label %{head}"));
                self.open(&exit);
            }
            3 => {
                let cases: Vec<String> = (0..self.rng.random_range(2..4)).map(|_| self.label("case")).collect();
                let join = self.label("sw.end");
                let mut text = format!("switch i32 %n, label %{join} [\n");
                for (i, c) in cases.iter().enumerate() {
                    let _ = writeln!(text, "    i32 {i}, label %{c}");
                }
                text.push_str("  ]");
                self.line(&text);
                for c in cases {
                    self.open(&c);
                    self.straight();
                    self.line(&format!("br label %{join}"));
                }
                self.open(&join);
            }
            4 => {
                let (cont, pad) = (self.label("invoke.cont"), self.label("lpad"));
                self.personality = true;
                self.line(&format!("invoke void @may_throw()\n          to label %{cont} unwind label %{pad}"));
                self.open(&pad);
                let lp = self.value();
                self.line(&format!("{lp} = landingpad {{ ptr, i32 }}\n          cleanup"));
                self.line(&format!("resume {{ ptr, i32 }} {lp}"));
                self.open(&cont);
            }
            _ => {
                // Early exit on error.
                let (fail, ok) = (self.label("fail"), self.label("ok"));
                let c = self.value();
                self.line(&format!("{c} = icmp eq ptr %arg, null"));
                self.line(&format!("br i1 {c}, label %{fail}, label %{ok}"));
                self.open(&fail);
                self.line("call void @free(ptr %arg)");
                self.line("unreachable");
                self.open(&ok);
            }
        }
    }
}

fn function(rng: &mut ChaCha8Rng, name: &str, risky: f64, callee: Option<&str>) -> String {
    let mut body = Body { rng, out: String::new(), next_value: 0, next_label: 0, risky, personality: false };
    body.open("entry");
    let regions = body.rng.random_range(1..=3);
    for _ in 0..regions {
        let depth = body.rng.random_range(1..=2);
        body.region(depth);
    }
    if let Some(callee) = callee {
        body.line(&format!("call void @{callee}(ptr %arg, i32 %n)"));
    }
    body.line("ret void");
    let personality = if body.personality { " personality ptr @__gxx_personality_v0" } else { "" };
    format!("define void @{name}(ptr %arg, i32 %n){personality} {{\n{}}}\n", body.out)
}

/// A labeled IR corpus: `cases` files, each with a `..._bad` function that
/// leans on heap and bulk-memory calls and a `..._good` one that mostly
/// uses stack storage. Deterministic given the config.
pub fn toy_corpus(config: ToyCorpusConfig) -> Vec<ToyFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.cases)
        .map(|i| {
            let cwe = [121, 122, 124, 126, 127, 190, 401, 415, 416, 476][i % 10];
            let stem = format!("CWE{cwe}_toy_{i:03}");
            let mut source = String::new();
            let _ = writeln!(source, "; toy case {i}");
            source.push_str("@.fmt = private constant [4 x i8] c\"%d\\0A\\00\"\n@handler = global ptr null\n\n");
            source.push_str(&function(&mut rng, &format!("{stem}_bad"), 0.55, None));
            source.push('\n');
            source.push_str(&function(&mut rng, &format!("{stem}_good"), 0.08, Some(&format!("{stem}_bad"))));
            source.push('\n');
            source.push_str(PRELUDE);
            ToyFile { file_name: format!("{stem}.ll"), source }
        })
        .collect()
}

/// Synthetic table with the real column layout in which `StaticAllocations`
/// alone separates the classes (vulnerable rows in `[8, 14]`, safe rows in
/// `[0, 5]`). Every other column is label-independent noise that still
/// respects the structural invariants of real extraction output.
pub fn synthetic_table(kind: TableKind, rows: usize, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        TableKind::Function => {
            let rows: Vec<FunctionFeatures> = (0..rows)
                .map(|i| {
                    let vulnerable = u8::from(i % 2 == 0);
                    let static_allocs =
                        if vulnerable == 1 { rng.random_range(8..=14) } else { rng.random_range(0..=5) };
                    let bbs = rng.random_range(1..=12);
                    let direct_calls = rng.random_range(0..=6);
                    let indirect_calls = rng.random_range(0..=1);
                    let cond_branches = rng.random_range(0..bbs);
                    FunctionFeatures {
                        function_id: i as u64,
                        function_name: format!("synthetic_{i}_{}", if vulnerable == 1 { "bad" } else { "good" }),
                        instructions: bbs + static_allocs + direct_calls + indirect_calls + rng.random_range(0..40),
                        bbs,
                        in_degree: rng.random_range(0..=5),
                        out_degree: direct_calls + indirect_calls,
                        num_loops: rng.random_range(0..=2),
                        static_allocs,
                        dynamic_allocs: rng.random_range(0..=direct_calls),
                        mem_ops: rng.random_range(0..=3),
                        cond_branches,
                        uncond_branches: bbs - cond_branches,
                        direct_calls,
                        indirect_calls,
                        vulnerable,
                    }
                })
                .collect();
            FeatureTable::from_function_rows(&rows)
        }
        TableKind::Block => {
            let rows: Vec<BlockFeatures> = (0..rows)
                .map(|i| {
                    let vulnerable = u8::from(i % 2 == 0);
                    let static_allocs =
                        if vulnerable == 1 { rng.random_range(8..=14) } else { rng.random_range(0..=5) };
                    let direct_calls = rng.random_range(0..=3);
                    let conditional = rng.random_bool(0.4);
                    BlockFeatures {
                        block_id: i as u64,
                        block_name: format!("BB_{}_synthetic_{}", i % 7, i / 7),
                        instructions: 1 + static_allocs + direct_calls + rng.random_range(0..10),
                        in_degree: rng.random_range(0..=3),
                        out_degree: if conditional { 2 } else { rng.random_range(0..=1) },
                        static_allocs,
                        dynamic_allocs: rng.random_range(0..=direct_calls),
                        mem_ops: rng.random_range(0..=1),
                        cond_branches: u64::from(conditional),
                        uncond_branches: u64::from(!conditional),
                        direct_calls,
                        indirect_calls: rng.random_range(0..=1),
                        vulnerable,
                    }
                })
                .collect();
            FeatureTable::from_block_rows(&rows)
        }
    }
}
