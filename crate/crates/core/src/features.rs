//! Per-block and per-function feature records.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::graphs::{count_natural_loops, CallGraph, Cfg, DomTree};
use crate::ir::{CalleeRef, InstrKind, IrBlock, IrFunction, IrInstruction, IrModule, SymbolLists};

/// Run-scoped monotone ID source.
#[derive(Debug, Default)]
pub struct IdCounter(AtomicU64);

impl IdCounter {
    pub fn new(start: u64) -> Self {
        IdCounter(AtomicU64::new(start))
    }

    pub fn next(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }

    pub fn peek(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFeatures {
    pub block_id: u64,
    pub block_name: String,
    pub instructions: u64,
    pub in_degree: u64,
    pub out_degree: u64,
    pub static_allocs: u64,
    pub dynamic_allocs: u64,
    pub mem_ops: u64,
    pub cond_branches: u64,
    pub uncond_branches: u64,
    pub direct_calls: u64,
    pub indirect_calls: u64,
    pub vulnerable: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionFeatures {
    pub function_id: u64,
    pub function_name: String,
    pub instructions: u64,
    pub bbs: u64,
    pub in_degree: u64,
    pub out_degree: u64,
    pub num_loops: u64,
    pub static_allocs: u64,
    pub dynamic_allocs: u64,
    pub mem_ops: u64,
    pub cond_branches: u64,
    pub uncond_branches: u64,
    pub direct_calls: u64,
    pub indirect_calls: u64,
    pub vulnerable: u8,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Counts {
    instructions: u64,
    static_allocs: u64,
    dynamic_allocs: u64,
    mem_ops: u64,
    cond_branches: u64,
    uncond_branches: u64,
    direct_calls: u64,
    indirect_calls: u64,
}

impl Counts {
    fn of_block(block: &IrBlock, symbols: &SymbolLists) -> Self {
        let mut c = Counts { instructions: block.instructions.len() as u64, ..Default::default() };
        for instr in &block.instructions {
            c.add_instruction(instr, symbols);
        }
        match block.terminator().kind {
            InstrKind::CondBranch { .. } | InstrKind::Switch { .. } => c.cond_branches = 1,
            InstrKind::UncondBranch { .. } | InstrKind::Return => c.uncond_branches = 1,
            _ => {}
        }
        c
    }

    fn add_instruction(&mut self, instr: &IrInstruction, symbols: &SymbolLists) {
        match &instr.kind {
            InstrKind::Alloca => self.static_allocs += 1,
            InstrKind::MemOp { .. } => self.mem_ops += 1,
            InstrKind::Call { callee: CalleeRef::Direct(sym), .. } => {
                self.direct_calls += 1;
                if symbols.is_dynamic_alloc(sym) {
                    self.dynamic_allocs += 1;
                }
            }
            InstrKind::Call { callee: CalleeRef::Indirect, .. } => self.indirect_calls += 1,
            _ => {}
        }
    }

    fn merge(mut self, other: Counts) -> Self {
        self.instructions += other.instructions;
        self.static_allocs += other.static_allocs;
        self.dynamic_allocs += other.dynamic_allocs;
        self.mem_ops += other.mem_ops;
        self.cond_branches += other.cond_branches;
        self.uncond_branches += other.uncond_branches;
        self.direct_calls += other.direct_calls;
        self.indirect_calls += other.indirect_calls;
        self
    }
}

/// Names are written into `;`-separated files, so semicolons become commas.
pub fn sanitize_name(name: &str) -> String {
    name.replace(';', ",").replace(['\n', '\r'], " ")
}

pub fn block_name(function: &IrFunction, block: &IrBlock) -> String {
    format!("BB_{}_{}", block.ordinal, sanitize_name(&function.normalized_name))
}

pub fn extract_block_features(
    function: &IrFunction,
    block: &IrBlock,
    cfg: &Cfg,
    ids: &IdCounter,
    label: u8,
    symbols: &SymbolLists,
) -> BlockFeatures {
    let c = Counts::of_block(block, symbols);
    BlockFeatures {
        block_id: ids.next(),
        block_name: block_name(function, block),
        instructions: c.instructions,
        in_degree: cfg.in_degree(block.ordinal) as u64,
        out_degree: cfg.out_degree(block.ordinal) as u64,
        static_allocs: c.static_allocs,
        dynamic_allocs: c.dynamic_allocs,
        mem_ops: c.mem_ops,
        cond_branches: c.cond_branches,
        uncond_branches: c.uncond_branches,
        direct_calls: c.direct_calls,
        indirect_calls: c.indirect_calls,
        vulnerable: label,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn extract_function_features(
    function: &IrFunction,
    cfg: &Cfg,
    dom: &DomTree,
    cg: &CallGraph,
    ids: &IdCounter,
    label: u8,
    symbols: &SymbolLists,
) -> FunctionFeatures {
    let c = function.blocks.iter().map(|b| Counts::of_block(b, symbols)).fold(Counts::default(), Counts::merge);
    FunctionFeatures {
        function_id: ids.next(),
        function_name: sanitize_name(&function.normalized_name),
        instructions: c.instructions,
        bbs: function.blocks.len() as u64,
        in_degree: cg.in_degree(&function.name) as u64,
        out_degree: c.direct_calls + c.indirect_calls,
        num_loops: count_natural_loops(cfg, dom) as u64,
        static_allocs: c.static_allocs,
        dynamic_allocs: c.dynamic_allocs,
        mem_ops: c.mem_ops,
        cond_branches: c.cond_branches,
        uncond_branches: c.uncond_branches,
        direct_calls: c.direct_calls,
        indirect_calls: c.indirect_calls,
        vulnerable: label,
    }
}

/// How a label was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LabelSource {
    Override,
    BadMarker,
    GoodMarker,
    /// Neither marker present; labelled safe.
    Unmarked,
    /// Both markers present; labelled vulnerable.
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelDecision {
    pub label: u8,
    pub source: LabelSource,
}

impl LabelDecision {
    pub fn is_warning(&self) -> bool {
        matches!(self.source, LabelSource::Unmarked | LabelSource::Ambiguous)
    }
}

/// Labels a function from the `bad` / `good` markers in its name.
pub fn derive_label(function_name: &str, override_label: Option<u8>) -> LabelDecision {
    if let Some(label) = override_label {
        return LabelDecision { label, source: LabelSource::Override };
    }
    match (function_name.contains("bad"), function_name.contains("good")) {
        (true, true) => LabelDecision { label: 1, source: LabelSource::Ambiguous },
        (true, false) => LabelDecision { label: 1, source: LabelSource::BadMarker },
        (false, true) => LabelDecision { label: 0, source: LabelSource::GoodMarker },
        (false, false) => LabelDecision { label: 0, source: LabelSource::Unmarked },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelWarning {
    pub function: String,
    pub source: LabelSource,
}

/// Feature rows for one module.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModuleFeatures {
    pub functions: Vec<FunctionFeatures>,
    pub blocks: Vec<BlockFeatures>,
    pub warnings: Vec<LabelWarning>,
}

/// Extracts every function and block row of `module`. Functions are
/// visited in textual order; blocks inherit their function's label.
pub fn extract_module(
    module: &IrModule,
    cg: &CallGraph,
    function_ids: &IdCounter,
    block_ids: &IdCounter,
    label_override: Option<u8>,
    symbols: &SymbolLists,
) -> Result<ModuleFeatures, crate::graphs::GraphError> {
    let mut out = ModuleFeatures::default();
    for function in module.functions.iter().filter(|f| f.is_definition) {
        let cfg = crate::graphs::build_cfg(function)?;
        let dom = crate::graphs::compute_dominators(&cfg);
        let decision = derive_label(&function.normalized_name, label_override);
        if decision.is_warning() {
            out.warnings.push(LabelWarning { function: function.normalized_name.clone(), source: decision.source });
        }
        out.functions.push(extract_function_features(function, &cfg, &dom, cg, function_ids, decision.label, symbols));
        for block in &function.blocks {
            out.blocks.push(extract_block_features(function, block, &cfg, block_ids, decision.label, symbols));
        }
    }
    Ok(out)
}
