//! Shared model plumbing: errors, the [`Classifier`] trait, file-format
//! dispatch and permutation importance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureTable, TableKind};
use crate::dnn::MlpModel;
use crate::gbdt::GbdtModel;
use crate::metrics::{self, MetricsError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file format `{found}` is not `{expected}`")]
    WrongFormat { expected: String, found: String },
    #[error("unsupported {format} version {found} (this build reads version {expected})")]
    VersionMismatch { format: String, expected: u32, found: u64 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("missing feature column `{0}`")]
    MissingFeature(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("class {class} has {count} rows; at least {needed} required")]
    DegenerateClass { class: u8, count: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<DatasetError> for ModelError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::MissingFeature(f) => ModelError::MissingFeature(f),
            DatasetError::DegenerateClass { class, count, needed } => {
                ModelError::DegenerateClass { class, count, needed }
            }
            other => ModelError::Dataset(other),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("unknown hyperparameter `{0}`")]
    Unknown(String),
    #[error("hyperparameter `{0}` cannot take value {1}")]
    BadValue(String, String),
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parses `bytes` as JSON and checks its `format` / `version` fields.
pub(crate) fn check_header(bytes: &[u8], format: &str, version: u32) -> Result<Value, ModelError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| ModelError::CorruptModel(e.to_string()))?;
    let found_format = value.get("format").and_then(Value::as_str).unwrap_or("");
    if found_format != format {
        return Err(ModelError::WrongFormat { expected: format.to_string(), found: found_format.to_string() });
    }
    match value.get("version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(version) => Ok(value),
        Some(v) => Err(ModelError::VersionMismatch { format: format.to_string(), expected: version, found: v }),
        None => Err(ModelError::CorruptModel("missing version".into())),
    }
}

/// A trained probabilistic binary classifier.
pub trait Classifier {
    /// Input columns, in the order `predict_matrix` expects them.
    fn feature_names(&self) -> &[String];

    /// Probability of the vulnerable class for each row.
    fn predict_matrix(&self, rows: &[Vec<f64>]) -> Vec<f64>;

    fn predict_table(&self, table: &FeatureTable) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict_matrix(&table.matrix(self.feature_names())?))
    }
}

impl Classifier for GbdtModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_matrix(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        GbdtModel::predict_matrix(self, rows)
    }
}

impl Classifier for MlpModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_matrix(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        MlpModel::predict_matrix(self, rows)
    }
}

/// Either model family, loaded from a file by its `format` field.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Gbdt(GbdtModel),
    Mlp(MlpModel),
}

impl AnyModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let value: Value = serde_json::from_slice(bytes).map_err(|e| ModelError::CorruptModel(e.to_string()))?;
        match value.get("format").and_then(Value::as_str) {
            Some(crate::gbdt::FORMAT) => Ok(AnyModel::Gbdt(GbdtModel::from_bytes(bytes)?)),
            Some(crate::dnn::FORMAT) => Ok(AnyModel::Mlp(MlpModel::from_bytes(bytes)?)),
            other => Err(ModelError::WrongFormat {
                expected: format!("{} or {}", crate::gbdt::FORMAT, crate::dnn::FORMAT),
                found: other.unwrap_or("").to_string(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyModel::Gbdt(m) => m.to_bytes(),
            AnyModel::Mlp(m) => m.to_bytes(),
        }
    }

    pub fn table_kind(&self) -> Option<TableKind> {
        match self {
            AnyModel::Gbdt(m) => m.table_kind,
            AnyModel::Mlp(m) => m.table_kind,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            AnyModel::Gbdt(_) => "gbdt",
            AnyModel::Mlp(_) => "mlp",
        }
    }
}

impl Classifier for AnyModel {
    fn feature_names(&self) -> &[String] {
        match self {
            AnyModel::Gbdt(m) => &m.feature_names,
            AnyModel::Mlp(m) => &m.feature_names,
        }
    }

    fn predict_matrix(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        match self {
            AnyModel::Gbdt(m) => m.predict_matrix(rows),
            AnyModel::Mlp(m) => m.predict_matrix(rows),
        }
    }
}

/// Score used by permutation importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceMetric {
    Auc,
    Accuracy,
}

impl ImportanceMetric {
    fn score(self, scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
        match self {
            ImportanceMetric::Auc => metrics::roc_auc(scores, labels),
            ImportanceMetric::Accuracy => metrics::accuracy(scores, labels, metrics::DEFAULT_THRESHOLD),
        }
    }
}

pub const PERMUTATION_REPEATS: usize = 5;

/// Drop in `metric` when each feature column is shuffled, averaged over
/// [`PERMUTATION_REPEATS`] shuffles. Returned in the model's feature order.
pub fn permutation_importance<C: Classifier + ?Sized>(
    model: &C,
    table: &FeatureTable,
    metric: ImportanceMetric,
    seed: u64,
) -> Result<Vec<(String, f64)>, ModelError> {
    let names = model.feature_names().to_vec();
    let x = table.matrix(&names)?;
    let y = table.labels()?;
    let baseline = metric.score(&model.predict_matrix(&x), &y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(names.len());
    for (f, name) in names.iter().enumerate() {
        let mut total = 0.0;
        for _ in 0..PERMUTATION_REPEATS {
            let mut column: Vec<f64> = x.iter().map(|r| r[f]).collect();
            column.shuffle(&mut rng);
            let permuted: Vec<Vec<f64>> = x
                .iter()
                .zip(&column)
                .map(|(r, &v)| {
                    let mut r = r.clone();
                    r[f] = v;
                    r
                })
                .collect();
            total += metric.score(&model.predict_matrix(&permuted), &y)?;
        }
        out.push((name.clone(), baseline - total / PERMUTATION_REPEATS as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!((logistic(-3.0) + logistic(3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn header_checks() {
        assert!(matches!(check_header(b"{", "x", 1), Err(ModelError::CorruptModel(_))));
        assert!(matches!(check_header(br#"{"format":"y","version":1}"#, "x", 1), Err(ModelError::WrongFormat { .. })));
        assert!(matches!(
            check_header(br#"{"format":"x","version":3}"#, "x", 1),
            Err(ModelError::VersionMismatch { found: 3, .. })
        ));
        assert!(check_header(br#"{"format":"x","version":1}"#, "x", 1).is_ok());
    }
}
