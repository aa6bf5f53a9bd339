//! Parser for a subset of textual LLVM IR.
//!
//! Only what the feature extractor needs is interpreted: function
//! definitions, block labels, terminators, calls, stack allocations and
//! memory intrinsics. Types, attributes, metadata and constant expressions
//! are carried along as raw text.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrError {
    #[error("line {line}: function body opened here is never closed")]
    UnbalancedBody { line: usize },
    #[error("line {line}: block `{label}` does not end with a terminator")]
    MalformedTerminator { line: usize, label: String },
    #[error("line {line}: duplicate block label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: function `{name}` defined twice")]
    DuplicateFunction { line: usize, name: String },
}

/// Target of a call instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CalleeRef {
    Direct(String),
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstrKind {
    CondBranch {
        targets: Vec<String>,
    },
    UncondBranch {
        target: String,
    },
    Switch {
        targets: Vec<String>,
    },
    Return,
    Unreachable,
    /// `call` or `invoke`. An `invoke` carries its normal and unwind
    /// destinations in `targets` and terminates its block.
    Call {
        callee: CalleeRef,
        targets: Vec<String>,
    },
    Alloca,
    MemOp {
        name: String,
        targets: Vec<String>,
    },
    /// Anything else. `resume`, `indirectbr` and friends are kept here with
    /// `terminator` set.
    Other {
        opcode: String,
        terminator: bool,
        targets: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrInstruction {
    pub kind: InstrKind,
    pub raw_text: String,
}

impl IrInstruction {
    pub fn is_terminator(&self) -> bool {
        match &self.kind {
            InstrKind::CondBranch { .. }
            | InstrKind::UncondBranch { .. }
            | InstrKind::Switch { .. }
            | InstrKind::Return
            | InstrKind::Unreachable => true,
            InstrKind::Call { targets, .. } | InstrKind::MemOp { targets, .. } => !targets.is_empty(),
            InstrKind::Other { terminator, .. } => *terminator,
            InstrKind::Alloca => false,
        }
    }

    /// Labels this instruction may transfer control to, in textual order.
    pub fn successors(&self) -> Vec<&str> {
        match &self.kind {
            InstrKind::CondBranch { targets }
            | InstrKind::Switch { targets }
            | InstrKind::Call { targets, .. }
            | InstrKind::MemOp { targets, .. }
            | InstrKind::Other { targets, .. } => targets.iter().map(String::as_str).collect(),
            InstrKind::UncondBranch { target } => vec![target.as_str()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrBlock {
    pub label: String,
    pub instructions: Vec<IrInstruction>,
    pub ordinal: usize,
}

impl IrBlock {
    pub fn terminator(&self) -> &IrInstruction {
        self.instructions.last().expect("parsed blocks are never empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrFunction {
    pub name: String,
    pub normalized_name: String,
    pub blocks: Vec<IrBlock>,
    pub is_definition: bool,
}

impl IrFunction {
    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IrModule {
    pub source_path: String,
    pub functions: Vec<IrFunction>,
    pub global_names: BTreeSet<String>,
}

impl IrModule {
    pub fn function(&self, name: &str) -> Option<&IrFunction> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// Symbol pattern: exact name, or a prefix when written with a trailing `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolPattern(String);

impl SymbolPattern {
    pub fn new(pattern: impl Into<String>) -> Self {
        SymbolPattern(pattern.into())
    }

    pub fn matches(&self, symbol: &str) -> bool {
        match self.0.strip_suffix('*') {
            Some(prefix) => symbol.starts_with(prefix),
            None => symbol == self.0,
        }
    }

    /// Canonical short name reported for a match (`llvm.memcpy.p0.p0.i64`
    /// matched by `llvm.memcpy*` reports `llvm.memcpy`).
    pub fn stem(&self) -> &str {
        self.0.trim_end_matches('*')
    }
}

pub const DEFAULT_MEM_OPS: &[&str] = &[
    "llvm.memcpy*",
    "llvm.memmove*",
    "llvm.memset*",
    "memcpy",
    "memmove",
    "memset",
    "strcpy",
    "strncpy",
    "strcat",
    "strncat",
    "memcmp",
];

pub const DEFAULT_DYNAMIC_ALLOCS: &[&str] =
    &["malloc", "calloc", "realloc", "aligned_alloc", "_Znwm", "_Znam", "_Znw*", "_Zna*"];

/// Configurable symbol lists used during classification and extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolLists {
    pub mem_ops: Vec<SymbolPattern>,
    pub dynamic_allocs: Vec<SymbolPattern>,
}

impl Default for SymbolLists {
    fn default() -> Self {
        SymbolLists {
            mem_ops: DEFAULT_MEM_OPS.iter().map(|s| SymbolPattern::new(*s)).collect(),
            dynamic_allocs: DEFAULT_DYNAMIC_ALLOCS.iter().map(|s| SymbolPattern::new(*s)).collect(),
        }
    }
}

impl SymbolLists {
    pub fn mem_op(&self, symbol: &str) -> Option<&SymbolPattern> {
        self.mem_ops.iter().find(|p| p.matches(symbol))
    }

    pub fn is_dynamic_alloc(&self, symbol: &str) -> bool {
        self.dynamic_allocs.iter().any(|p| p.matches(symbol))
    }
}

/// Pure text transform applied to raw function symbols.
pub type NameNormalizer = Arc<dyn Fn(&str) -> String + Send + Sync>;

pub fn identity_normalizer() -> NameNormalizer {
    Arc::new(|raw: &str| raw.to_string())
}

#[derive(Clone)]
pub struct ParseOptions {
    pub symbols: SymbolLists,
    pub normalizer: NameNormalizer,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { symbols: SymbolLists::default(), normalizer: identity_normalizer() }
    }
}

impl fmt::Debug for ParseOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParseOptions").field("symbols", &self.symbols).finish_non_exhaustive()
    }
}

pub fn normalize_name(raw: &str, normalizer: &NameNormalizer) -> String {
    normalizer(raw)
}

fn callee_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"([@%])("(?:[^"\\]|\\.)*"|[-A-Za-z$._0-9]+)\s*\("#).unwrap())
}

fn symbol_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"@("(?:[^"\\]|\\.)*"|[-A-Za-z$._0-9]+)"#).unwrap())
}

fn label_ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"label\s+%("(?:[^"\\]|\\.)*"|[-A-Za-z$._0-9]+)"#).unwrap())
}

fn label_def_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^("(?:[^"\\]|\\.)*"|[-A-Za-z$._0-9]+):$"#).unwrap())
}

fn legacy_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^;\s*<label>:(\d+)"#).unwrap())
}

fn unquote(name: &str) -> String {
    name.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(name).to_string()
}

fn label_targets(text: &str) -> Vec<String> {
    label_ref_re().captures_iter(text).map(|c| unquote(&c[1])).collect()
}

/// Strips a `;` comment, ignoring semicolons inside string literals.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_str = !in_str,
            ';' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Opcode of an instruction line, after dropping an optional `%x =` result.
fn opcode_and_rest(line: &str) -> (&str, &str) {
    let body = match line.find(" = ") {
        Some(eq) if line.starts_with('%') => line[eq + 3..].trim_start(),
        _ => line,
    };
    let mut words = body.splitn(2, char::is_whitespace);
    let first = words.next().unwrap_or("");
    (first, words.next().unwrap_or("").trim_start())
}

fn find_callee(rest: &str) -> CalleeRef {
    // Skip past the argument list's callee position: the first `@sym(` or
    // `%reg(` is the callee, since return and function types never carry
    // sigils.
    if let Some(c) = callee_re().captures(rest) {
        let name = unquote(&c[2]);
        return if &c[1] == "@" && !name.is_empty() { CalleeRef::Direct(name) } else { CalleeRef::Indirect };
    }
    // Legacy `call i32 bitcast (i32 (...)* @f to i32 ()*)()`.
    if rest.contains("bitcast") {
        if let Some(c) = symbol_re().captures(rest) {
            return CalleeRef::Direct(unquote(&c[1]));
        }
    }
    CalleeRef::Indirect
}

fn call_kind(rest: &str, targets: Vec<String>, symbols: &SymbolLists) -> InstrKind {
    if rest.contains(" asm ") || rest.starts_with("asm ") {
        return InstrKind::Other { opcode: "asm".into(), terminator: !targets.is_empty(), targets };
    }
    match find_callee(rest) {
        CalleeRef::Direct(name) => match symbols.mem_op(&name) {
            Some(p) => InstrKind::MemOp { name: p.stem().to_string(), targets },
            None => InstrKind::Call { callee: CalleeRef::Direct(name), targets },
        },
        CalleeRef::Indirect => InstrKind::Call { callee: CalleeRef::Indirect, targets },
    }
}

/// Classifies one instruction (trimmed, comment stripped) using the default
/// symbol lists.
pub fn classify_instruction(line: &str) -> IrInstruction {
    classify_with(line, &SymbolLists::default())
}

pub fn classify_with(line: &str, symbols: &SymbolLists) -> IrInstruction {
    let text = line.trim();
    let (mut opcode, mut rest) = opcode_and_rest(text);
    while matches!(opcode, "tail" | "musttail" | "notail") {
        let (o, r) = opcode_and_rest(rest);
        opcode = o;
        rest = r;
    }
    let kind = match opcode {
        "br" => {
            let targets = label_targets(rest);
            if rest.starts_with("label") && targets.len() == 1 {
                InstrKind::UncondBranch { target: targets.into_iter().next().unwrap() }
            } else {
                InstrKind::CondBranch { targets }
            }
        }
        "switch" => {
            // Textual order is the default first, then the cases.
            InstrKind::Switch { targets: label_targets(rest) }
        }
        "ret" => InstrKind::Return,
        "unreachable" => InstrKind::Unreachable,
        "call" => call_kind(rest, Vec::new(), symbols),
        "invoke" => {
            let targets = match rest.rfind(" to ") {
                Some(i) => label_targets(&rest[i..]),
                None => label_targets(rest),
            };
            call_kind(rest, targets, symbols)
        }
        "alloca" => InstrKind::Alloca,
        "resume" | "cleanupret" | "catchret" | "catchswitch" | "indirectbr" | "callbr" => {
            InstrKind::Other { opcode: opcode.to_string(), terminator: true, targets: label_targets(rest) }
        }
        other => InstrKind::Other { opcode: other.to_string(), terminator: false, targets: Vec::new() },
    };
    IrInstruction { kind, raw_text: text.to_string() }
}

struct BodyBuilder<'a> {
    blocks: Vec<IrBlock>,
    labels: HashSet<String>,
    current: Option<(String, Vec<IrInstruction>, usize)>,
    symbols: &'a SymbolLists,
}

impl<'a> BodyBuilder<'a> {
    fn new(symbols: &'a SymbolLists) -> Self {
        BodyBuilder { blocks: Vec::new(), labels: HashSet::new(), current: None, symbols }
    }

    fn fresh_label(&self, base: &str) -> String {
        if !self.labels.contains(base) {
            return base.to_string();
        }
        (1..).map(|i| format!("{base}.{i}")).find(|l| !self.labels.contains(l)).unwrap()
    }

    fn open(&mut self, label: String, line: usize) -> Result<(), IrError> {
        self.close(line)?;
        if !self.labels.insert(label.clone()) {
            return Err(IrError::DuplicateLabel { line, label });
        }
        self.current = Some((label, Vec::new(), line));
        Ok(())
    }

    /// Closes the open block; it must be non-empty and terminated.
    fn close(&mut self, line: usize) -> Result<(), IrError> {
        if let Some((label, instructions, opened)) = self.current.take() {
            match instructions.last() {
                Some(last) if last.is_terminator() => {
                    let ordinal = self.blocks.len();
                    self.blocks.push(IrBlock { label, instructions, ordinal });
                }
                _ => {
                    let at = if instructions.is_empty() { opened } else { line };
                    return Err(IrError::MalformedTerminator { line: at, label });
                }
            }
        }
        Ok(())
    }

    fn push(&mut self, text: &str, line: usize) -> Result<(), IrError> {
        let needs_block = match &self.current {
            None => true,
            Some((_, instrs, _)) => instrs.last().is_some_and(IrInstruction::is_terminator),
        };
        if needs_block {
            let base = if self.blocks.is_empty() && self.current.is_none() {
                "entry".to_string()
            } else {
                let ordinal = self.blocks.len() + usize::from(self.current.is_some());
                format!("bb{ordinal}")
            };
            let label = self.fresh_label(&base);
            self.open(label, line)?;
        }
        let instr = classify_with(text, self.symbols);
        self.current.as_mut().unwrap().1.push(instr);
        Ok(())
    }
}

fn function_name(define_line: &str) -> Option<String> {
    symbol_re().captures(define_line).map(|c| unquote(&c[1]))
}

fn bracket_balance(s: &str) -> i32 {
    let mut in_str = false;
    let mut depth = 0;
    for ch in s.chars() {
        match ch {
            '"' => in_str = !in_str,
            '[' if !in_str => depth += 1,
            ']' if !in_str => depth -= 1,
            _ => {}
        }
    }
    depth
}

/// Parses textual IR into an [`IrModule`].
pub fn parse_module(source: &str, source_path: &str) -> Result<IrModule, IrError> {
    parse_module_with(source, source_path, &ParseOptions::default())
}

pub fn parse_module_with(source: &str, source_path: &str, options: &ParseOptions) -> Result<IrModule, IrError> {
    let mut module = IrModule { source_path: source_path.to_string(), ..Default::default() };
    let mut seen_functions = HashSet::new();
    let lines: Vec<&str> = source.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let code = strip_comment(lines[i]).trim();
        i += 1;
        if let Some(rest) = code.strip_prefix("declare") {
            if let Some(name) = function_name(rest) {
                module.global_names.insert(name);
            }
            continue;
        }
        if code.starts_with('@') {
            if let Some(name) = function_name(code) {
                module.global_names.insert(name);
            }
            continue;
        }
        if !code.starts_with("define") {
            continue;
        }
        let Some(name) = function_name(code) else { continue };
        let mut opened = code.ends_with('{');
        if !opened {
            // The opening brace may sit on its own line.
            while i < lines.len() && strip_comment(lines[i]).trim().is_empty() {
                i += 1;
            }
            if i < lines.len() && strip_comment(lines[i]).trim() == "{" {
                opened = true;
                i += 1;
            }
        }
        if !opened {
            return Err(IrError::UnbalancedBody { line: line_no });
        }
        if !seen_functions.insert(name.clone()) {
            return Err(IrError::DuplicateFunction { line: line_no, name });
        }
        module.global_names.insert(name.clone());

        let mut body = BodyBuilder::new(&options.symbols);
        let mut closed = false;
        while i < lines.len() {
            let raw = lines[i];
            let at = i + 1;
            i += 1;
            let trimmed = raw.trim();
            if let Some(c) = legacy_label_re().captures(trimmed) {
                body.open(c[1].to_string(), at)?;
                continue;
            }
            let mut text = strip_comment(raw).trim().to_string();
            if text.is_empty() {
                continue;
            }
            if text == "}" {
                body.close(at)?;
                closed = true;
                break;
            }
            if text.starts_with("define") {
                return Err(IrError::UnbalancedBody { line: line_no });
            }
            if let Some(c) = label_def_re().captures(&text) {
                body.open(unquote(&c[1]), at)?;
                continue;
            }
            // Join continuation lines: multi-line `switch` tables and the
            // `to label .. unwind label ..` tail of `invoke`.
            let mut depth = bracket_balance(&text);
            while depth > 0 && i < lines.len() {
                let next = strip_comment(lines[i]).trim();
                i += 1;
                depth += bracket_balance(next);
                text.push(' ');
                text.push_str(next);
            }
            if text.contains("invoke ") && !text.contains("unwind") && i < lines.len() {
                let next = strip_comment(lines[i]).trim();
                if next.starts_with("to ") {
                    text.push(' ');
                    text.push_str(next);
                    i += 1;
                }
            }
            body.push(&text, at)?;
        }
        if !closed {
            return Err(IrError::UnbalancedBody { line: line_no });
        }
        let normalized_name = normalize_name(&name, &options.normalizer);
        module.functions.push(IrFunction { name, normalized_name, blocks: body.blocks, is_definition: true });
    }
    Ok(module)
}

/// Small reference functions used by tests across the workspace.
pub mod samples {
    pub const S1: &str = "define i32 @f(i32 %x) {
entry:
  %c = icmp sgt i32 %x, 0
  br i1 %c, label %then, label %else
then:
  br label %end
else:
  br label %end
end:
  ret i32 0
}
";

    pub const S2: &str = "define void @g() {
entry:
  br label %loop
loop:
  br i1 true, label %loop, label %exit
exit:
  ret void
}
";
}
