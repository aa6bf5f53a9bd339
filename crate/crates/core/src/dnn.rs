//! Feedforward binary classifier: dense ReLU layers with inverted dropout,
//! a sigmoid output unit, binary cross-entropy, Adam and early stopping on
//! validation loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{stratified_split_indices, FeatureTable, TableKind};
use crate::model::{check_header, logistic, ModelError, ParamError};

pub use crate::model::{permutation_importance, ImportanceMetric};

pub const FORMAT: &str = "fuzzdistill-mlp";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_units: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Stratified holdout monitored for early stopping. With 0 the training
    /// loss is monitored instead.
    pub validation_fraction: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_units: vec![128, 64, 32],
            dropout_rate: 0.2,
            learning_rate: 0.001,
            max_epochs: 30,
            batch_size: 32,
            patience: 5,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_fraction: 0.2,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.hidden_units.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn set_param(&mut self, name: &str, value: &Value) -> Result<(), ParamError> {
        let bad = || ParamError::BadValue(name.to_string(), value.to_string());
        let num = || value.as_f64().ok_or_else(bad);
        let int = || value.as_u64().map(|v| v as usize).ok_or_else(bad);
        match name {
            "hidden_units" => {
                self.hidden_units = value
                    .as_array()
                    .and_then(|a| a.iter().map(|v| v.as_u64().map(|u| u as usize)).collect::<Option<Vec<_>>>())
                    .ok_or_else(bad)?
            }
            "dropout_rate" => self.dropout_rate = num()?,
            "learning_rate" => self.learning_rate = num()?,
            "max_epochs" => self.max_epochs = int()?,
            "batch_size" => self.batch_size = int()?,
            "patience" => self.patience = int()?,
            "seed" => self.seed = int()? as u64,
            "validation_fraction" => self.validation_fraction = num()?,
            other => return Err(ParamError::Unknown(other.to_string())),
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_kind: Option<TableKind>,
    pub config: MlpConfig,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Hidden layers followed by the single-unit output layer.
    pub layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the standardized input; `activations[l + 1]` is
    /// the (masked) output of hidden layer `l`.
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per hidden layer (`0` or `1 / keep`).
    pub masks: Vec<Option<Vec<f64>>>,
    pub output_logit: f64,
    pub probability: f64,
}

impl MlpModel {
    /// Network with every parameter zero and identity standardization.
    pub fn zeros(feature_names: Vec<String>, config: MlpConfig) -> Self {
        let n = feature_names.len();
        let mut layers = Vec::new();
        let mut width = n;
        for &units in config.hidden_units.iter().chain(std::iter::once(&1)) {
            layers.push(Dense::zeros(width, units));
            width = units;
        }
        MlpModel {
            format: FORMAT.into(),
            version: VERSION,
            feature_names,
            table_kind: None,
            config,
            mean: vec![0.0; n],
            std: vec![1.0; n],
            layers,
        }
    }

    /// He-normal weights, zero biases.
    pub fn initialized(feature_names: Vec<String>, config: MlpConfig, rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(feature_names, config);
        for layer in &mut model.layers {
            let normal = Normal::new(0.0, (2.0 / layer.inputs.max(1) as f64).sqrt()).expect("finite std");
            for w in &mut layer.weights {
                *w = normal.sample(rng);
            }
        }
        model
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass. Dropout is applied only when `training` and the rate is
    /// positive; kept units are scaled by `1 / keep` so inference needs no
    /// rescaling.
    pub fn forward(&self, row: &[f64], training: bool, rng: &mut impl Rng) -> Result<ForwardCache, ModelError> {
        if row.len() != self.feature_names.len() {
            return Err(ModelError::ShapeMismatch { expected: self.feature_names.len(), found: row.len() });
        }
        let keep = 1.0 - self.config.dropout_rate;
        let dropout = training && self.config.dropout_rate > 0.0;
        let hidden = self.layers.len() - 1;
        let mut activations = vec![self.standardize(row)];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(hidden);
        for layer in &self.layers[..hidden] {
            let z = layer.apply(activations.last().unwrap());
            let mut a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            if dropout {
                let mask: Vec<f64> =
                    (0..a.len()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                masks.push(Some(mask));
            } else {
                masks.push(None);
            }
            pre_activations.push(z);
            activations.push(a);
        }
        let z = self.layers[hidden].apply(activations.last().unwrap());
        let output_logit = z[0];
        pre_activations.push(z);
        Ok(ForwardCache { activations, pre_activations, masks, output_logit, probability: logistic(output_logit) })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        // Inference never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(row, false, &mut rng).map(|c| c.probability).unwrap_or(f64::NAN)
    }

    pub fn predict_matrix(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn predict_proba(&self, table: &FeatureTable) -> Result<Vec<f64>, ModelError> {
        let x = table.matrix(&self.feature_names)?;
        Ok(self.predict_matrix(&x))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let value = check_header(bytes, FORMAT, VERSION)?;
        let model: MlpModel = serde_json::from_value(value).map_err(|e| ModelError::CorruptModel(e.to_string()))?;
        model.check_shapes().map_err(ModelError::CorruptModel)?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), String> {
        let n = self.feature_names.len();
        if self.mean.len() != n || self.std.len() != n {
            return Err("standardization vectors do not match feature count".into());
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err("standardization stddev must be positive".into());
        }
        let mut width = n;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.inputs != width
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(format!("layer {i} has inconsistent shape"));
            }
            width = layer.outputs;
        }
        if self.layers.is_empty() || width != 1 {
            return Err("output layer must have exactly one unit".into());
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients { layers: model.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params().copied().collect::<Vec<_>>()).collect()
    }
}

/// Binary cross-entropy of a logit, computed without forming the sigmoid.
pub fn bce_from_logit(logit: f64, y: f64) -> f64 {
    let softplus = if logit > 0.0 { logit + (-logit).exp().ln_1p() } else { logit.exp().ln_1p() };
    softplus - y * logit
}

/// Mean BCE over a batch and its exact gradient. Dropout masks, when
/// `training` is set, are drawn once per sample and held fixed.
pub fn grad(
    model: &MlpModel,
    x: &[Vec<f64>],
    y: &[u8],
    training: bool,
    rng: &mut impl Rng,
) -> Result<(f64, Gradients), ModelError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ModelError::ShapeMismatch { expected: y.len(), found: x.len() });
    }
    let batch = x.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let last = model.layers.len() - 1;
    for (row, &label) in x.iter().zip(y) {
        let cache = model.forward(row, training, rng)?;
        let target = f64::from(label);
        loss += bce_from_logit(cache.output_logit, target);
        // d(mean BCE)/d(output logit)
        let mut delta = vec![(cache.probability - target) / batch];
        for l in (0..=last).rev() {
            let layer = &model.layers[l];
            let input = &cache.activations[l];
            let g = &mut grads.layers[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(gw, a)| *gw += d * a);
            }
            if l == 0 {
                break;
            }
            // Back through hidden layer l - 1: weights, dropout mask, ReLU.
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(w).for_each(|(p, w)| *p += d * w);
            }
            let z = &cache.pre_activations[l - 1];
            for (i, p) in prev.iter_mut().enumerate() {
                if z[i] <= 0.0 {
                    *p = 0.0;
                } else if let Some(mask) = &cache.masks[l - 1] {
                    *p *= mask[i];
                }
            }
            delta = prev;
        }
    }
    Ok((loss / batch, grads))
}

/// Mean BCE in inference mode.
pub fn mean_loss(model: &MlpModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &l)| bce_from_logit(model.forward(r, false, &mut rng).unwrap().output_logit, f64::from(l)))
        .sum();
    total / x.len() as f64
}

struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(model: &MlpModel, config: &MlpConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.weights.len() + l.bias.len()]).collect();
        Adam {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            epsilon: config.adam_epsilon,
            lr: config.learning_rate,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (l, (layer, g)) in model.layers.iter_mut().zip(&grads.layers).enumerate() {
            for (k, (p, g)) in layer.params_mut().zip(g.params()).enumerate() {
                let m = &mut self.m[l][k];
                let v = &mut self.v[l][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Patience-based stopping on a monitored loss. An epoch improves only when
/// its loss is strictly below the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: None, waited: 0 }
    }

    /// Records the loss of `epoch` (0-based). Returns `true` when it is the
    /// new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.waited = 0;
            true
        } else {
            self.waited += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.waited >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpTraining {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    /// 0-based epoch whose weights were restored.
    pub best_epoch: Option<usize>,
    /// Rows (indices into the training input) held out for validation.
    pub validation_rows: Vec<usize>,
}

fn accuracy_of(model: &MlpModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
    let correct = x.iter().zip(y).filter(|(r, &l)| (model.predict_row(r) >= 0.5) == (l == 1)).count();
    correct as f64 / x.len() as f64
}

fn standardization(x: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() as f64;
    let mean: Vec<f64> = (0..n).map(|f| x.iter().map(|r| r[f]).sum::<f64>() / rows).collect();
    let std = (0..n)
        .map(|f| {
            let var = x.iter().map(|r| (r[f] - mean[f]).powi(2)).sum::<f64>() / rows;
            let s = var.sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Trains on a dense matrix, holding out a stratified `validation_fraction`
/// of it for early stopping. Standardization uses every row of `x`.
/// Deterministic given `(x, y, config)`.
pub fn train_mlp_matrix(
    x: &[Vec<f64>],
    y: &[u8],
    feature_names: Vec<String>,
    config: &MlpConfig,
) -> Result<MlpTraining, ModelError> {
    check_inputs(x, y, &feature_names, config)?;
    let (fit_rows, val_rows) = if config.validation_fraction > 0.0 {
        stratified_split_indices(y, config.validation_fraction, config.seed)?
    } else {
        ((0..x.len()).collect(), Vec::new())
    };
    let pick = |rows: &[usize]| -> (Vec<Vec<f64>>, Vec<u8>) {
        (rows.iter().map(|&i| x[i].clone()).collect(), rows.iter().map(|&i| y[i]).collect())
    };
    let (fit_x, fit_y) = pick(&fit_rows);
    let (val_x, val_y) = pick(&val_rows);
    let scaling = standardization(x, feature_names.len());
    let mut training = fit(&fit_x, &fit_y, &val_x, &val_y, feature_names, config, scaling)?;
    training.validation_rows = val_rows;
    Ok(training)
}

/// Trains on `(x, y)` and monitors loss on a caller-supplied holdout, which
/// may be empty (training loss is then monitored). `validation_fraction` is
/// ignored. Standardization uses the training rows only.
pub fn train_mlp_with_holdout(
    x: &[Vec<f64>],
    y: &[u8],
    val_x: &[Vec<f64>],
    val_y: &[u8],
    feature_names: Vec<String>,
    config: &MlpConfig,
) -> Result<MlpTraining, ModelError> {
    check_inputs(x, y, &feature_names, config)?;
    if val_x.len() != val_y.len() {
        return Err(ModelError::ShapeMismatch { expected: val_y.len(), found: val_x.len() });
    }
    if let Some(row) = val_x.iter().find(|r| r.len() != feature_names.len()) {
        return Err(ModelError::ShapeMismatch { expected: feature_names.len(), found: row.len() });
    }
    let scaling = standardization(x, feature_names.len());
    fit(x, y, val_x, val_y, feature_names, config, scaling)
}

fn check_inputs(x: &[Vec<f64>], y: &[u8], feature_names: &[String], config: &MlpConfig) -> Result<(), ModelError> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(ModelError::ShapeMismatch { expected: y.len(), found: x.len() });
    }
    if let Some(row) = x.iter().find(|r| r.len() != feature_names.len()) {
        return Err(ModelError::ShapeMismatch { expected: feature_names.len(), found: row.len() });
    }
    for class in [0u8, 1] {
        let count = y.iter().filter(|&&l| l == class).count();
        if count == 0 {
            return Err(ModelError::DegenerateClass { class, count, needed: 1 });
        }
    }
    Ok(())
}

fn fit(
    fit_x: &[Vec<f64>],
    fit_y: &[u8],
    val_x: &[Vec<f64>],
    val_y: &[u8],
    feature_names: Vec<String>,
    config: &MlpConfig,
    (mean, std): (Vec<f64>, Vec<f64>),
) -> Result<MlpTraining, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::initialized(feature_names, config.clone(), &mut rng);
    model.mean = mean;
    model.std = std;

    let mut adam = Adam::new(&model, config);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..fit_x.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| fit_x[i].clone()).collect();
            let by: Vec<u8> = batch.iter().map(|&i| fit_y[i]).collect();
            let (_, grads) = grad(&model, &bx, &by, true, &mut rng)?;
            adam.update(&mut model, &grads);
        }
        let train_loss = mean_loss(&model, fit_x, fit_y);
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy: accuracy_of(&model, fit_x, fit_y),
            validation_loss: (!val_x.is_empty()).then(|| mean_loss(&model, val_x, val_y)),
            validation_accuracy: (!val_x.is_empty()).then(|| accuracy_of(&model, val_x, val_y)),
        };
        let monitored = record.validation_loss.unwrap_or(train_loss);
        history.push(record);
        if stopper.observe(epoch, monitored) {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    if config.max_epochs > 0 {
        model = best;
    }
    Ok(MlpTraining { model, history, best_epoch: stopper.best_epoch(), validation_rows: Vec::new() })
}

pub fn train_mlp(table: &FeatureTable, config: &MlpConfig) -> Result<MlpTraining, ModelError> {
    let names = table.feature_names();
    let x = table.matrix(&names)?;
    let y = table.labels()?;
    let mut training = train_mlp_matrix(&x, &y, names, config)?;
    training.model.table_kind = Some(table.kind());
    Ok(training)
}
