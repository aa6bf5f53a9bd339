//! Semicolon-separated feature tables.
//!
//! Extraction writes one header-less fragment per input file; [`assemble_corpus`]
//! concatenates fragments in path order and prepends the canonical header.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::features::{BlockFeatures, FunctionFeatures};

pub const LABEL_COLUMN: &str = "VULNERABLE";

pub const FUNCTION_HEADER: [&str; 15] = [
    "FunctionID",
    "FunctionName",
    "Instructions",
    "BBs",
    "InDegree",
    "OutDegree",
    "NumLoops",
    "StaticAllocations",
    "DynamicAllocations",
    "MemOps",
    "CondBranches",
    "UnCondBranches",
    "DirectCalls",
    "InDirectCalls",
    LABEL_COLUMN,
];

pub const BLOCK_HEADER: [&str; 13] = [
    "BlockID",
    "BlockName",
    "Instructions",
    "InDegree",
    "OutDegree",
    "StaticAllocations",
    "DynamicAllocations",
    "MemOps",
    "CondBranches",
    "UnCondBranches",
    "DirectCalls",
    "InDirectCalls",
    LABEL_COLUMN,
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("row {row}, column `{column}`: cell contains `;` or a line break")]
    IllegalCell { row: usize, column: String },
    #[error("header mismatch: expected {expected} columns `{}`, found `{}`", .expected_names.join(";"), .found.join(";"))]
    HeaderMismatch { expected: usize, expected_names: Vec<String>, found: Vec<String> },
    #[error("{}line {line}: expected {expected} fields, found {found}", file_prefix(.file))]
    RaggedRow { file: Option<PathBuf>, line: usize, expected: usize, found: usize },
    #[error("{}line {line}: column `{column}` is not numeric: `{value}`", file_prefix(.file))]
    NonNumericCell { file: Option<PathBuf>, line: usize, column: String, value: String },
    #[error("{}line {line}: label must be 0 or 1, found `{value}`", file_prefix(.file))]
    InvalidLabel { file: Option<PathBuf>, line: usize, value: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("missing feature column `{0}`")]
    MissingFeature(String),
    #[error("table has no `VULNERABLE` label column")]
    MissingLabel,
    #[error("the label column cannot be dropped from a training table")]
    LabelDropped,
    #[error("class {class} has {count} rows; at least {needed} required")]
    DegenerateClass { class: u8, count: usize, needed: usize },
    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("unknown table kind `{0}` (expected `function` or `block`)")]
    UnknownKind(String),
    #[error("unknown feature profile `{0}`")]
    UnknownProfile(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn file_prefix(file: &Option<PathBuf>) -> String {
    file.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default()
}

impl DatasetError {
    /// 1-based line number for errors that carry one.
    pub fn line(&self) -> Option<usize> {
        match self {
            DatasetError::RaggedRow { line, .. }
            | DatasetError::NonNumericCell { line, .. }
            | DatasetError::InvalidLabel { line, .. } => Some(*line),
            DatasetError::HeaderMismatch { .. } => Some(1),
            _ => None,
        }
    }

    fn with_file(self, path: &Path) -> Self {
        let f = Some(path.to_path_buf());
        match self {
            DatasetError::RaggedRow { line, expected, found, .. } => {
                DatasetError::RaggedRow { file: f, line, expected, found }
            }
            DatasetError::NonNumericCell { line, column, value, .. } => {
                DatasetError::NonNumericCell { file: f, line, column, value }
            }
            DatasetError::InvalidLabel { line, value, .. } => DatasetError::InvalidLabel { file: f, line, value },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Function,
    Block,
}

impl TableKind {
    pub fn canonical_header(self) -> &'static [&'static str] {
        match self {
            TableKind::Function => &FUNCTION_HEADER,
            TableKind::Block => &BLOCK_HEADER,
        }
    }

    pub fn name_column(self) -> &'static str {
        match self {
            TableKind::Function => "FunctionName",
            TableKind::Block => "BlockName",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::Function => "function",
            TableKind::Block => "block",
        }
    }

    /// File name of an assembled dataset of this kind.
    pub fn dataset_file_name(self) -> String {
        format!("{}_features.ssv", self.as_str())
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TableKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "function" | "fn" => Ok(TableKind::Function),
            "block" | "bb" => Ok(TableKind::Block),
            other => Err(DatasetError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Text(s) => f.write_str(s),
            Cell::Num(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => write!(f, "{}", *v as i64),
            Cell::Num(v) => write!(f, "{v}"),
        }
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Num(v as f64)
    }
}

/// Header-carrying table of feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    kind: TableKind,
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl FeatureTable {
    /// Builds a table, checking row arity and the label column.
    pub fn new(kind: TableKind, header: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self, DatasetError> {
        let label = header.iter().position(|h| h == LABEL_COLUMN);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(DatasetError::RaggedRow {
                    file: None,
                    line: i + 1,
                    expected: header.len(),
                    found: row.len(),
                });
            }
            if let Some(l) = label {
                if !matches!(row[l], Cell::Num(v) if v == 0.0 || v == 1.0) {
                    return Err(DatasetError::InvalidLabel { file: None, line: i + 1, value: row[l].to_string() });
                }
            }
        }
        Ok(FeatureTable { kind, header, rows })
    }

    pub fn empty(kind: TableKind) -> Self {
        FeatureTable { kind, header: canonical(kind), rows: Vec::new() }
    }

    pub fn from_function_rows(rows: &[FunctionFeatures]) -> Self {
        let rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.function_id.into(),
                    Cell::Text(r.function_name.clone()),
                    r.instructions.into(),
                    r.bbs.into(),
                    r.in_degree.into(),
                    r.out_degree.into(),
                    r.num_loops.into(),
                    r.static_allocs.into(),
                    r.dynamic_allocs.into(),
                    r.mem_ops.into(),
                    r.cond_branches.into(),
                    r.uncond_branches.into(),
                    r.direct_calls.into(),
                    r.indirect_calls.into(),
                    u64::from(r.vulnerable).into(),
                ]
            })
            .collect();
        FeatureTable { kind: TableKind::Function, header: canonical(TableKind::Function), rows }
    }

    pub fn from_block_rows(rows: &[BlockFeatures]) -> Self {
        let rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.block_id.into(),
                    Cell::Text(r.block_name.clone()),
                    r.instructions.into(),
                    r.in_degree.into(),
                    r.out_degree.into(),
                    r.static_allocs.into(),
                    r.dynamic_allocs.into(),
                    r.mem_ops.into(),
                    r.cond_branches.into(),
                    r.uncond_branches.into(),
                    r.direct_calls.into(),
                    r.indirect_calls.into(),
                    u64::from(r.vulnerable).into(),
                ]
            })
            .collect();
        FeatureTable { kind: TableKind::Block, header: canonical(TableKind::Block), rows }
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn has_label(&self) -> bool {
        self.column_index(LABEL_COLUMN).is_some()
    }

    pub fn labels(&self) -> Result<Vec<u8>, DatasetError> {
        let l = self.column_index(LABEL_COLUMN).ok_or(DatasetError::MissingLabel)?;
        Ok(self.rows.iter().map(|r| r[l].as_f64().unwrap_or(0.0) as u8).collect())
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>, DatasetError> {
        let c = self.column_index(name).ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[c].as_f64().unwrap_or(f64::NAN)).collect())
    }

    /// Model inputs: every column except the label and the name column.
    pub fn feature_names(&self) -> Vec<String> {
        let name_col = self.kind.name_column();
        self.header.iter().filter(|h| *h != LABEL_COLUMN && *h != name_col).cloned().collect()
    }

    /// Row-major matrix of the named columns, in the given order.
    pub fn matrix(&self, names: &[String]) -> Result<Vec<Vec<f64>>, DatasetError> {
        let idx = names
            .iter()
            .map(|n| match self.column_index(n) {
                Some(i) if n != self.kind.name_column() => Ok(i),
                _ => Err(DatasetError::MissingFeature(n.clone())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.rows.iter().map(|r| idx.iter().map(|&i| r[i].as_f64().unwrap_or(f64::NAN)).collect()).collect())
    }

    /// Identifier of each row: the name column, or the row index.
    pub fn row_names(&self) -> Vec<String> {
        match self.column_index(self.kind.name_column()) {
            Some(c) => self.rows.iter().map(|r| r[c].to_string()).collect(),
            None => (0..self.rows.len()).map(|i| i.to_string()).collect(),
        }
    }

    /// Sub-table with the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            kind: self.kind,
            header: self.header.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

fn canonical(kind: TableKind) -> Vec<String> {
    kind.canonical_header().iter().map(|s| s.to_string()).collect()
}

/// Serializes a table as `;`-separated lines.
pub fn write_ssv(table: &FeatureTable, with_header: bool) -> Result<String, DatasetError> {
    let mut out = String::new();
    if with_header {
        out.push_str(&table.header.join(";"));
        out.push('\n');
    }
    for (r, row) in table.rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let text = cell.to_string();
            if text.contains([';', '\n', '\r']) {
                return Err(DatasetError::IllegalCell { row: r, column: table.header[c].clone() });
            }
            if c > 0 {
                out.push(';');
            }
            out.push_str(&text);
        }
        out.push('\n');
    }
    Ok(out)
}

fn sniff_delimiter(header_line: &str) -> char {
    if header_line.matches(',').count() > header_line.matches(';').count() {
        ','
    } else {
        ';'
    }
}

fn parse_rows(
    lines: impl Iterator<Item = (usize, String)>,
    header: &[String],
    kind: TableKind,
    delimiter: char,
) -> Result<Vec<Vec<Cell>>, DatasetError> {
    let name_col = kind.name_column();
    let mut rows = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(delimiter).collect();
        if fields.len() != header.len() {
            return Err(DatasetError::RaggedRow {
                file: None,
                line: line_no,
                expected: header.len(),
                found: fields.len(),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for (col, field) in header.iter().zip(fields) {
            let field = field.trim();
            if col == name_col {
                row.push(Cell::Text(field.to_string()));
                continue;
            }
            let v: f64 = field.parse().map_err(|_| DatasetError::NonNumericCell {
                file: None,
                line: line_no,
                column: col.clone(),
                value: field.to_string(),
            })?;
            if col == LABEL_COLUMN && v != 0.0 && v != 1.0 {
                return Err(DatasetError::InvalidLabel { file: None, line: line_no, value: field.to_string() });
            }
            row.push(Cell::Num(v));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn content_lines(text: &str, first_line: usize) -> impl Iterator<Item = (usize, String)> + '_ {
    text.lines()
        .enumerate()
        .map(move |(i, l)| (i + first_line, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses a table with a header line. The header must be the canonical
/// header of `expected_kind`, optionally without the label column.
pub fn read_table(text: &str, expected_kind: TableKind) -> Result<FeatureTable, DatasetError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = content_lines(text, 1);
    let canonical = canonical(expected_kind);
    let Some((header_line_no, header_line)) = lines.next() else {
        return Err(DatasetError::HeaderMismatch {
            expected: canonical.len(),
            expected_names: canonical,
            found: Vec::new(),
        });
    };
    let delimiter = sniff_delimiter(&header_line);
    let header: Vec<String> = header_line.split(delimiter).map(|s| s.trim().to_string()).collect();
    let unlabeled = &canonical[..canonical.len() - 1];
    if header != canonical && header != unlabeled {
        return Err(DatasetError::HeaderMismatch {
            expected: canonical.len(),
            expected_names: canonical,
            found: header,
        });
    }
    debug_assert_eq!(header_line_no, 1);
    let rows = parse_rows(lines, &header, expected_kind, delimiter)?;
    Ok(FeatureTable { kind: expected_kind, header, rows })
}

/// Parses a header-less fragment carrying the full canonical column set.
pub fn read_fragment(text: &str, kind: TableKind) -> Result<FeatureTable, DatasetError> {
    let header = canonical(kind);
    let rows = parse_rows(content_lines(text, 1), &header, kind, ';')?;
    Ok(FeatureTable { kind, header, rows })
}

fn is_fragment(path: &Path) -> bool {
    let assembled = [TableKind::Function.dataset_file_name(), TableKind::Block.dataset_file_name()];
    path.extension().is_some_and(|e| e == "ssv")
        && !path.file_name().is_some_and(|n| assembled.iter().any(|a| n == a.as_str()))
}

/// Lists fragment files under `root` in lexicographic path order.
pub fn fragment_paths(root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut paths = Vec::new();
    for entry in WalkDir::new(root) {
        let entry = entry.map_err(|e| DatasetError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("directory walk failed")),
        })?;
        if entry.file_type().is_file() && is_fragment(entry.path()) {
            paths.push(entry.into_path());
        }
    }
    paths.sort();
    Ok(paths)
}

/// Concatenates every `.ssv` fragment under `root_dir` into one table.
pub fn assemble_corpus(root_dir: &Path, kind: TableKind) -> Result<FeatureTable, DatasetError> {
    let mut table = FeatureTable::empty(kind);
    for path in fragment_paths(root_dir)? {
        let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let fragment = read_fragment(&text, kind).map_err(|e| e.with_file(&path))?;
        table.rows.extend(fragment.rows);
    }
    Ok(table)
}

/// Named set of columns dropped before training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub name: String,
    pub dropped_columns: Vec<String>,
}

impl FeatureProfile {
    pub fn new(name: &str, dropped: &[&str]) -> Self {
        FeatureProfile { name: name.to_string(), dropped_columns: dropped.iter().map(|s| s.to_string()).collect() }
    }

    pub fn none() -> Self {
        Self::new("none", &[])
    }

    pub fn function_default() -> Self {
        Self::new("function-default", &["FunctionID", "FunctionName", "InDirectCalls"])
    }

    pub fn function_nomem() -> Self {
        Self::new("function-nomem", &["FunctionID", "FunctionName", "InDirectCalls", "MemOps"])
    }

    pub fn block_default() -> Self {
        Self::new(
            "block-default",
            &["BlockID", "BlockName", "CondBranches", "InDirectCalls", "UnCondBranches", "MemOps"],
        )
    }

    pub fn builtin(name: &str) -> Result<Self, DatasetError> {
        match name {
            "none" => Ok(Self::none()),
            "function-default" => Ok(Self::function_default()),
            "function-nomem" => Ok(Self::function_nomem()),
            "block-default" => Ok(Self::block_default()),
            other => Err(DatasetError::UnknownProfile(other.to_string())),
        }
    }

    pub fn default_for(kind: TableKind) -> Self {
        match kind {
            TableKind::Function => Self::function_default(),
            TableKind::Block => Self::block_default(),
        }
    }
}

/// Drops the profile's columns, keeping row order.
pub fn apply_feature_profile(table: &FeatureTable, profile: &FeatureProfile) -> Result<FeatureTable, DatasetError> {
    let mut drop = vec![false; table.header.len()];
    for col in &profile.dropped_columns {
        if col == LABEL_COLUMN {
            return Err(DatasetError::LabelDropped);
        }
        let i = table.column_index(col).ok_or_else(|| DatasetError::UnknownColumn(col.clone()))?;
        drop[i] = true;
    }
    fn keep<T: Clone>(v: &[T], drop: &[bool]) -> Vec<T> {
        v.iter().zip(drop).filter(|(_, d)| !**d).map(|(x, _)| x.clone()).collect()
    }
    Ok(FeatureTable {
        kind: table.kind,
        header: keep(&table.header, &drop),
        rows: table.rows.iter().map(|r| keep(r, &drop)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SanityRule {
    /// N must be 0 or 1.
    CondBranchesNotBinary,
    /// M must be 0 or 1.
    UnCondBranchesNotBinary,
    /// N * M must be 0.
    BothBranchKinds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SanityViolation {
    pub row: usize,
    pub rule: SanityRule,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SanityReport {
    pub rows_checked: usize,
    pub violations: Vec<SanityViolation>,
}

impl SanityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the branch-count identities on every block row.
pub fn sanity_check_blocks(table: &FeatureTable) -> Result<SanityReport, DatasetError> {
    let n = table.numeric_column("CondBranches")?;
    let m = table.numeric_column("UnCondBranches")?;
    let mut report = SanityReport { rows_checked: table.len(), violations: Vec::new() };
    let binary = |v: f64| v == 0.0 || v == 1.0;
    for (row, (&n, &m)) in n.iter().zip(&m).enumerate() {
        if !binary(n) {
            report.violations.push(SanityViolation { row, rule: SanityRule::CondBranchesNotBinary });
        }
        if !binary(m) {
            report.violations.push(SanityViolation { row, rule: SanityRule::UnCondBranchesNotBinary });
        }
        if n * m != 0.0 {
            report.violations.push(SanityViolation { row, rule: SanityRule::BothBranchKinds });
        }
    }
    Ok(report)
}

/// Stratified split of row indices. Each class contributes
/// `round(fraction * n_class)` rows to the test side, clamped so both sides
/// keep at least one row of every class. Both index lists are sorted.
pub fn stratified_split_indices(
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(DatasetError::DegenerateClass { class, count: idx.len(), needed: 2 });
        }
        idx.shuffle(&mut rng);
        let n_test = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(
    table: &FeatureTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable), DatasetError> {
    let (train, test) = stratified_split_indices(&table.labels()?, test_fraction, seed)?;
    Ok((table.select_rows(&train), table.select_rows(&test)))
}

/// Stratified k-fold assignment: returns `k` sorted index lists.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(DatasetError::DegenerateClass { class, count: idx.len(), needed: k });
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
