//! Gradient-boosted regression trees for binary classification.
//!
//! Each round fits one tree to the first and second derivatives of the
//! logistic loss at the current margins. Splits are exact and greedy over
//! sorted feature values; a leaf stores `-G / (H + lambda)` scaled by the
//! learning rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{FeatureTable, TableKind};
use crate::model::{check_header, logistic, ModelError, ParamError};

pub const FORMAT: &str = "fuzzdistill-gbdt";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub seed: u64,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
    pub base_score: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_estimators: 400,
            learning_rate: 0.05,
            max_depth: 10,
            subsample: 0.8,
            colsample_bytree: 0.8,
            seed: 40,
            reg_lambda: 1.0,
            min_child_weight: 1.0,
            base_score: 0.5,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must lie in (0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.reg_lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return bad("reg_lambda and min_child_weight must be non-negative");
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return bad("base_score must lie in (0, 1)");
        }
        Ok(())
    }

    /// Sets one hyperparameter from a JSON value (used by grid search).
    pub fn set_param(&mut self, name: &str, value: &Value) -> Result<(), ParamError> {
        let num = || value.as_f64().ok_or_else(|| ParamError::BadValue(name.to_string(), value.to_string()));
        let int = || value.as_u64().ok_or_else(|| ParamError::BadValue(name.to_string(), value.to_string()));
        match name {
            "n_estimators" => self.n_estimators = int()? as usize,
            "learning_rate" => self.learning_rate = num()?,
            "max_depth" => self.max_depth = int()? as usize,
            "subsample" => self.subsample = num()?,
            "colsample_bytree" => self.colsample_bytree = num()?,
            "seed" | "random_state" => self.seed = int()?,
            "reg_lambda" => self.reg_lambda = num()?,
            "min_child_weight" => self.min_child_weight = num()?,
            "base_score" => self.base_score = num()?,
            other => return Err(ParamError::Unknown(other.to_string())),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    fn validate(&self, feature_count: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { value } if !value.is_finite() => return Err(format!("node {i}: non-finite leaf")),
                Node::Split { feature, threshold, left, right } => {
                    if *feature >= feature_count {
                        return Err(format!("node {i}: feature index {feature} out of range"));
                    }
                    if threshold.is_nan()
                        || *left <= i
                        || *right <= i
                        || *left >= self.nodes.len()
                        || *right >= self.nodes.len()
                    {
                        return Err(format!("node {i}: malformed split"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format: String,
    pub version: u32,
    pub config: GbdtConfig,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_kind: Option<TableKind>,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn new(config: GbdtConfig, feature_names: Vec<String>, trees: Vec<Tree>) -> Self {
        GbdtModel { format: FORMAT.into(), version: VERSION, config, feature_names, table_kind: None, trees }
    }

    pub fn base_margin(&self) -> f64 {
        let p = self.config.base_score;
        (p / (1.0 - p)).ln()
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_margin() + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        logistic(self.margin(row))
    }

    pub fn predict_matrix(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn predict_proba(&self, table: &FeatureTable) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict_matrix(&table.matrix(&self.feature_names)?))
    }

    /// Split counts per feature, normalized to sum to 1 (all zeros when the
    /// ensemble never splits). Returned in feature order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut counts = vec![0usize; self.feature_names.len()];
        for node in self.trees.iter().flat_map(|t| &t.nodes) {
            if let Node::Split { feature, .. } = node {
                counts[*feature] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        self.feature_names
            .iter()
            .zip(counts)
            .map(|(n, c)| (n.clone(), if total == 0 { 0.0 } else { c as f64 / total as f64 }))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let value = check_header(bytes, FORMAT, VERSION)?;
        let model: GbdtModel = serde_json::from_value(value).map_err(|e| ModelError::CorruptModel(e.to_string()))?;
        for (i, t) in model.trees.iter().enumerate() {
            t.validate(model.feature_names.len()).map_err(|e| ModelError::CorruptModel(format!("tree {i}: {e}")))?;
        }
        Ok(model)
    }
}

/// Ranks `(name, weight)` pairs by descending weight, ties by input order.
pub fn top_features(importance: &[(String, f64)], k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<_> = importance.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);
    ranked
}

/// Gradient and hessian of the logistic loss at margin `m` for label `y`.
pub fn logistic_grad_hess(margin: f64, y: f64) -> (f64, f64) {
    let p = logistic(margin);
    (p - y, p * (1.0 - p))
}

/// Mean logistic loss of `margins` against `labels`.
pub fn logloss_from_margins(margins: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            // log(1 + e^m) - y m, evaluated stably.
            let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            softplus - y * m
        })
        .sum();
    total / margins.len() as f64
}

/// Structure score gain of splitting a node into (left, right).
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a GbdtConfig,
    nodes: Vec<Node>,
    goes_left: Vec<bool>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    /// `sorted[j]` lists the node's rows ordered by feature `features[j]`.
    fn build(&mut self, features: &[usize], sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: -g / (h + self.config.reg_lambda) * self.config.learning_rate });
        if depth >= self.config.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(best) = self.best_split(features, &sorted, g, h) else { return id };

        for &r in rows {
            self.goes_left[r] = self.x[r][best.feature] < best.threshold;
        }
        let (left, right): (Vec<_>, Vec<_>) =
            sorted.into_iter().map(|list| list.into_iter().partition::<Vec<usize>, _>(|&r| self.goes_left[r])).unzip();
        let l = self.build(features, left, depth + 1);
        let r = self.build(features, right, depth + 1);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left: l, right: r };
        id
    }

    fn best_split(&self, features: &[usize], sorted: &[Vec<usize>], g: f64, h: f64) -> Option<BestSplit> {
        let lambda = self.config.reg_lambda;
        let mcw = self.config.min_child_weight;
        let mut best: Option<BestSplit> = None;
        for (j, &f) in features.iter().enumerate() {
            let list = &sorted[j];
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..list.len() - 1 {
                let r = list[k];
                gl += self.grad[r];
                hl += self.hess[r];
                let v = self.x[r][f];
                let next = self.x[list[k + 1]][f];
                if v == next {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < mcw || hr < mcw {
                    continue;
                }
                let gain = split_gain(gl, hl, gr, hr, lambda);
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold <= v {
                        threshold = next;
                    }
                    best = Some(BestSplit { gain, feature: f, threshold });
                }
            }
        }
        best
    }
}

fn fit_tree(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    features: &[usize],
    config: &GbdtConfig,
) -> Tree {
    let sorted: Vec<Vec<usize>> = features
        .iter()
        .map(|&f| {
            let mut list = rows.to_vec();
            list.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            list
        })
        .collect();
    let mut builder = TreeBuilder { x, grad, hess, config, nodes: Vec::new(), goes_left: vec![false; x.len()] };
    builder.build(features, sorted, 0);
    Tree { nodes: builder.nodes }
}

/// Result of a training run: the model plus the mean training logloss
/// (over all rows) after each round.
#[derive(Debug, Clone)]
pub struct GbdtTraining {
    pub model: GbdtModel,
    pub train_logloss: Vec<f64>,
    /// Only one class was present. Boosting still runs and pulls the
    /// margins toward that class's prior.
    pub degenerate: bool,
}

/// Trains on a dense matrix. Deterministic given `(x, y, config)`.
pub fn train_gbdt_matrix(
    x: &[Vec<f64>],
    y: &[u8],
    feature_names: Vec<String>,
    config: &GbdtConfig,
) -> Result<GbdtTraining, ModelError> {
    config.validate()?;
    if x.len() != y.len() || x.is_empty() {
        return Err(ModelError::ShapeMismatch { expected: y.len(), found: x.len() });
    }
    if let Some(row) = x.iter().find(|r| r.len() != feature_names.len()) {
        return Err(ModelError::ShapeMismatch { expected: feature_names.len(), found: row.len() });
    }
    let labels: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let positives = labels.iter().sum::<f64>();
    let degenerate = positives == 0.0 || positives == labels.len() as f64;

    let n = x.len();
    let nf = feature_names.len();
    let mut model = GbdtModel::new(config.clone(), feature_names, Vec::with_capacity(config.n_estimators));
    let mut margins = vec![model.base_margin(); n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.n_estimators);
    let all_rows: Vec<usize> = (0..n).collect();
    let all_features: Vec<usize> = (0..nf).collect();

    for _ in 0..config.n_estimators {
        for i in 0..n {
            (grad[i], hess[i]) = logistic_grad_hess(margins[i], labels[i]);
        }
        let rows = if config.subsample < 1.0 {
            let mut r = all_rows.clone();
            r.shuffle(&mut rng);
            r.truncate(((n as f64 * config.subsample).round() as usize).max(1));
            r.sort_unstable();
            r
        } else {
            all_rows.clone()
        };
        let features = if config.colsample_bytree < 1.0 && nf > 0 {
            let mut f = all_features.clone();
            f.shuffle(&mut rng);
            f.truncate(((nf as f64 * config.colsample_bytree).round() as usize).max(1));
            f.sort_unstable();
            f
        } else {
            all_features.clone()
        };
        let tree = if features.is_empty() {
            let g: f64 = rows.iter().map(|&r| grad[r]).sum();
            let h: f64 = rows.iter().map(|&r| hess[r]).sum();
            Tree::leaf(-g / (h + config.reg_lambda) * config.learning_rate)
        } else {
            fit_tree(x, &grad, &hess, &rows, &features, config)
        };
        for (m, row) in margins.iter_mut().zip(x) {
            *m += tree.predict(row);
        }
        model.trees.push(tree);
        history.push(logloss_from_margins(&margins, &labels));
    }
    Ok(GbdtTraining { model, train_logloss: history, degenerate })
}

/// Trains on every feature column of `table` (see [`FeatureTable::feature_names`]).
pub fn train_gbdt(table: &FeatureTable, config: &GbdtConfig) -> Result<GbdtTraining, ModelError> {
    let names = table.feature_names();
    let x = table.matrix(&names)?;
    let y = table.labels()?;
    let mut training = train_gbdt_matrix(&x, &y, names, config)?;
    training.model.table_kind = Some(table.kind());
    Ok(training)
}
