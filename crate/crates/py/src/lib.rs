//! Python bindings. Every fallible call raises `ValueError`.

use std::fmt::Display;

use fuzztarget::dataset::{self, FeatureProfile};
use fuzztarget::dnn::{self, MlpConfig};
use fuzztarget::gbdt::{self, GbdtConfig};
use fuzztarget::ir::ParseOptions;
use fuzztarget::metrics;
use fuzztarget::model::ParamError;
use fuzztarget::pipeline::{extract_sources, CallGraphScope, ExtractOptions, SourceFile};
use fuzztarget::report::{self, Filter, Thresholds};
use fuzztarget::toy::{self, ToyCorpusConfig};
use fuzztarget::{AnyModel, Classifier, FeatureTable, TableKind};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;

fn err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(kind: &str) -> PyResult<TableKind> {
    kind.parse().map_err(err)
}

/// Round-trips a Python object through JSON text.
fn to_value(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn apply_params(
    py: Python<'_>,
    params: Option<&Bound<'_, PyDict>>,
    mut set: impl FnMut(&str, &Value) -> Result<(), ParamError>,
) -> PyResult<()> {
    let Some(params) = params else { return Ok(()) };
    for (k, v) in params.iter() {
        let name: String = k.extract()?;
        set(&name, &to_value(py, &v)?).map_err(err)?;
    }
    Ok(())
}

/// A function or basic-block feature table.
#[pyclass(name = "Table", module = "fuzztarget", frozen)]
pub struct PyTable {
    pub inner: FeatureTable,
}

#[pymethods]
impl PyTable {
    /// Parses semicolon-separated text, with or without the label column.
    #[staticmethod]
    fn parse(text: &str, kind: &str) -> PyResult<Self> {
        Ok(PyTable { inner: dataset::read_table(text, parse_kind(kind)?).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (kind, rows, seed = 0))]
    fn synthetic(kind: &str, rows: usize, seed: u64) -> PyResult<Self> {
        Ok(PyTable { inner: toy::synthetic_table(parse_kind(kind)?, rows, seed) })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn header(&self) -> Vec<String> {
        self.inner.header().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Table(kind={}, rows={}, columns={})", self.inner.kind(), self.inner.len(), self.inner.header().len())
    }

    #[pyo3(signature = (header = true))]
    fn to_ssv(&self, header: bool) -> PyResult<String> {
        dataset::write_ssv(&self.inner, header).map_err(err)
    }

    fn row_names(&self) -> Vec<String> {
        self.inner.row_names()
    }

    fn labels(&self) -> PyResult<Vec<u8>> {
        self.inner.labels().map_err(err)
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.numeric_column(name).map_err(err)
    }

    /// Drops the columns of a built-in profile.
    fn with_profile(&self, name: &str) -> PyResult<Self> {
        let profile = FeatureProfile::builtin(name).map_err(err)?;
        Ok(PyTable { inner: dataset::apply_feature_profile(&self.inner, &profile).map_err(err)? })
    }

    fn drop_columns(&self, names: Vec<String>) -> PyResult<Self> {
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let profile = FeatureProfile::new("custom", &names);
        Ok(PyTable { inner: dataset::apply_feature_profile(&self.inner, &profile).map_err(err)? })
    }

    /// Stratified `(train, test)` split.
    #[pyo3(signature = (test_fraction = 0.2, seed = 42))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = dataset::stratified_split(&self.inner, test_fraction, seed).map_err(err)?;
        Ok((PyTable { inner: a }, PyTable { inner: b }))
    }

    /// `{"rows_checked": n, "violations": [{"row": i, "rule": name}]}` for a
    /// block table.
    fn sanity_check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &dataset::sanity_check_blocks(&self.inner).map_err(err)?)
    }
}

/// A trained GBDT or MLP classifier.
#[pyclass(name = "Model", module = "fuzztarget", frozen)]
pub struct PyModel {
    pub inner: AnyModel,
}

#[pymethods]
impl PyModel {
    /// `params` maps hyperparameter names to values, as in `--set`.
    #[staticmethod]
    #[pyo3(signature = (table, params = None))]
    fn train_gbdt(py: Python<'_>, table: &PyTable, params: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut config = GbdtConfig::default();
        apply_params(py, params, |k, v| config.set_param(k, v))?;
        let training = py.detach(|| gbdt::train_gbdt(&table.inner, &config)).map_err(err)?;
        Ok(PyModel { inner: AnyModel::Gbdt(training.model) })
    }

    #[staticmethod]
    #[pyo3(signature = (table, params = None))]
    fn train_mlp(py: Python<'_>, table: &PyTable, params: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut config = MlpConfig::default();
        apply_params(py, params, |k, v| config.set_param(k, v))?;
        let training = py.detach(|| dnn::train_mlp(&table.inner, &config)).map_err(err)?;
        Ok(PyModel { inner: AnyModel::Mlp(training.model) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: AnyModel::from_bytes(text.as_bytes()).map_err(err)? })
    }

    fn to_json(&self) -> String {
        String::from_utf8(self.inner.to_bytes()).expect("model JSON is UTF-8")
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family()
    }

    #[getter]
    fn kind(&self) -> Option<&'static str> {
        self.inner.table_kind().map(TableKind::as_str)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Model(family={}, features={})", self.inner.family(), self.inner.feature_names().len())
    }

    /// Vulnerable-class probability for each row.
    fn predict(&self, py: Python<'_>, table: &PyTable) -> PyResult<Vec<f64>> {
        py.detach(|| self.inner.predict_table(&table.inner)).map_err(err)
    }

    /// Stats over every row plus records passing `filter` (`all`, `high` or `sure`).
    #[pyo3(signature = (table, filter = "all", high = None, sure = None))]
    fn report<'py>(
        &self,
        py: Python<'py>,
        table: &PyTable,
        filter: &str,
        high: Option<f64>,
        sure: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let filter: Filter = filter.parse().map_err(err)?;
        let d = Thresholds::default();
        let t = Thresholds { high: high.unwrap_or(d.high), sure: sure.unwrap_or(d.sure) };
        t.validate().map_err(err)?;
        let r = report::predict_report(&self.inner, &table.inner, filter, &t).map_err(err)?;
        to_py(py, &r)
    }

    /// Metrics on a labelled table.
    #[pyo3(signature = (table, threshold = 0.5))]
    fn evaluate<'py>(&self, py: Python<'py>, table: &PyTable, threshold: f64) -> PyResult<Bound<'py, PyAny>> {
        let scores = self.predict(py, table)?;
        let labels = table.inner.labels().map_err(err)?;
        to_py(py, &metrics::evaluate(&scores, &labels, threshold).map_err(err)?)
    }
}

/// Extracts one table from `[(path, ir_text)]`. The first file that fails
/// to parse raises.
#[pyfunction]
#[pyo3(signature = (sources, kind = "function", label = None, corpus_callgraph = false))]
fn extract(
    py: Python<'_>,
    sources: Vec<(String, String)>,
    kind: &str,
    label: Option<u8>,
    corpus_callgraph: bool,
) -> PyResult<PyTable> {
    let kind = parse_kind(kind)?;
    if matches!(label, Some(l) if l > 1) {
        return Err(PyValueError::new_err("label must be 0 or 1"));
    }
    let sources: Vec<SourceFile> = sources.into_iter().map(|(path, text)| SourceFile { path, text }).collect();
    let options = ExtractOptions {
        parse: ParseOptions::default(),
        label_override: label,
        callgraph: if corpus_callgraph { CallGraphScope::Corpus } else { CallGraphScope::PerFile },
    };
    let outcome = py.detach(|| extract_sources(&sources, &options));
    if let Some(e) = outcome.errors.first() {
        return Err(err(e));
    }
    Ok(PyTable { inner: outcome.combined(kind) })
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = 0.5))]
fn evaluate<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<u8>, threshold: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::evaluate(&scores, &labels, threshold).map_err(err)?)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    metrics::roc_auc(&scores, &labels).map_err(err)
}

/// `[(file_name, source)]` for a small labelled IR corpus.
#[pyfunction]
#[pyo3(signature = (cases = 20, seed = 7))]
fn toy_corpus(cases: usize, seed: u64) -> Vec<(String, String)> {
    toy::toy_corpus(ToyCorpusConfig { cases, seed }).into_iter().map(|f| (f.file_name, f.source)).collect()
}

#[pymodule(name = "fuzztarget")]
pub fn fuzztarget_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTable>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(toy_corpus, m)?)?;
    Ok(())
}
