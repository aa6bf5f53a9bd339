//! Batch extraction: IR files in, per-file feature tables out.
//!
//! Files are parsed in parallel; feature rows and their IDs are produced
//! sequentially in input order, so output is independent of thread timing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;
use walkdir::WalkDir;

use crate::dataset::{FeatureTable, TableKind};
use crate::features::{extract_module, IdCounter, LabelWarning, ModuleFeatures};
use crate::graphs::{build_callgraph, GraphError};
use crate::ir::{parse_module_with, IrError, IrModule, ParseOptions};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: IrError },
    #[error("{path}: {source}")]
    Graph { path: String, source: GraphError },
}

impl ExtractError {
    pub fn path(&self) -> &str {
        match self {
            ExtractError::Io { path, .. } | ExtractError::Parse { path, .. } | ExtractError::Graph { path, .. } => path,
        }
    }
}

/// Which modules contribute call edges when computing function in-degree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CallGraphScope {
    /// Each file is analyzed on its own.
    #[default]
    PerFile,
    /// Call sites anywhere in the batch count.
    Corpus,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    pub parse: ParseOptions,
    pub label_override: Option<u8>,
    pub callgraph: CallGraphScope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileFeatures {
    pub path: String,
    pub features: ModuleFeatures,
}

impl FileFeatures {
    pub fn table(&self, kind: TableKind) -> FeatureTable {
        match kind {
            TableKind::Function => FeatureTable::from_function_rows(&self.features.functions),
            TableKind::Block => FeatureTable::from_block_rows(&self.features.blocks),
        }
    }
}

#[derive(Debug, Default)]
pub struct ExtractOutcome {
    /// Successfully processed files, in input order.
    pub files: Vec<FileFeatures>,
    pub errors: Vec<ExtractError>,
}

impl ExtractOutcome {
    pub fn warnings(&self) -> impl Iterator<Item = (&str, &LabelWarning)> {
        self.files.iter().flat_map(|f| f.features.warnings.iter().map(move |w| (f.path.as_str(), w)))
    }

    /// All rows of one kind, concatenated in input order.
    pub fn combined(&self, kind: TableKind) -> FeatureTable {
        match kind {
            TableKind::Function => {
                let rows: Vec<_> = self.files.iter().flat_map(|f| f.features.functions.iter().cloned()).collect();
                FeatureTable::from_function_rows(&rows)
            }
            TableKind::Block => {
                let rows: Vec<_> = self.files.iter().flat_map(|f| f.features.blocks.iter().cloned()).collect();
                FeatureTable::from_block_rows(&rows)
            }
        }
    }
}

/// Parses and extracts every source. Failures are collected per file and
/// do not stop the batch.
pub fn extract_sources(sources: &[SourceFile], options: &ExtractOptions) -> ExtractOutcome {
    let parsed: Vec<Result<IrModule, IrError>> =
        sources.par_iter().map(|s| parse_module_with(&s.text, &s.path, &options.parse)).collect();

    let mut outcome = ExtractOutcome::default();
    let mut modules = Vec::with_capacity(sources.len());
    for (source, result) in sources.iter().zip(parsed) {
        match result {
            Ok(m) => modules.push(m),
            Err(e) => outcome.errors.push(ExtractError::Parse { path: source.path.clone(), source: e }),
        }
    }
    let corpus_graph = (options.callgraph == CallGraphScope::Corpus).then(|| build_callgraph(&modules));

    let function_ids = IdCounter::new(0);
    let block_ids = IdCounter::new(0);
    for module in &modules {
        let file_graph;
        let cg = match &corpus_graph {
            Some(g) => g,
            None => {
                file_graph = build_callgraph([module]);
                &file_graph
            }
        };
        match extract_module(module, cg, &function_ids, &block_ids, options.label_override, &options.parse.symbols) {
            Ok(features) => outcome.files.push(FileFeatures { path: module.source_path.clone(), features }),
            Err(e) => outcome.errors.push(ExtractError::Graph { path: module.source_path.clone(), source: e }),
        }
    }
    outcome
}

/// Expands `inputs` to `.ll` files: files are kept as given, directories are
/// walked recursively in lexicographic order.
pub fn collect_ir_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, ExtractError> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in WalkDir::new(input).sort_by_file_name() {
                let entry = entry.map_err(|e| ExtractError::Io {
                    path: input.display().to_string(),
                    source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("directory walk failed")),
                })?;
                if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "ll") {
                    out.push(entry.into_path());
                }
            }
        } else if input.exists() {
            out.push(input.clone());
        } else {
            return Err(ExtractError::Io {
                path: input.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            });
        }
    }
    Ok(out)
}

/// Reads files as UTF-8; unreadable files become errors.
pub fn read_sources(paths: &[PathBuf]) -> (Vec<SourceFile>, Vec<ExtractError>) {
    let mut sources = Vec::new();
    let mut errors = Vec::new();
    for p in paths {
        let path = p.display().to_string();
        match fs::read_to_string(p) {
            Ok(text) => sources.push(SourceFile { path, text }),
            Err(source) => errors.push(ExtractError::Io { path, source }),
        }
    }
    (sources, errors)
}

/// Output file names for per-input fragments: the input's stem plus
/// `.ssv`, with `-2`, `-3`, ... appended to repeated stems in input order.
pub fn fragment_names(paths: &[&str]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem =
                Path::new(p).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                format!("{stem}.ssv")
            } else {
                format!("{stem}-{n}.ssv")
            }
        })
        .collect()
}
