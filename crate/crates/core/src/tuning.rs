//! Grid search with stratified k-fold cross-validation, scored by mean AUC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{stratified_kfold, DatasetError, FeatureTable};
use crate::dnn::{train_mlp_matrix, MlpConfig};
use crate::gbdt::{train_gbdt_matrix, GbdtConfig};
use crate::metrics::{roc_auc, MetricsError};
use crate::model::{ModelError, ParamError};

/// Candidate values per hyperparameter name.
pub type Grid = BTreeMap<String, Vec<Value>>;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A configuration type that can be searched over.
pub trait Tunable: Clone {
    fn set_param(&mut self, name: &str, value: &Value) -> Result<(), ParamError>;

    /// Fits on `(x, y)` and returns scores for `eval`.
    fn fit_predict(
        &self,
        x: &[Vec<f64>],
        y: &[u8],
        names: &[String],
        eval: &[Vec<f64>],
    ) -> Result<Vec<f64>, ModelError>;

    /// Tie-break key among equally scored candidates; smaller wins.
    fn complexity(&self) -> (usize, usize);
}

impl Tunable for GbdtConfig {
    fn set_param(&mut self, name: &str, value: &Value) -> Result<(), ParamError> {
        GbdtConfig::set_param(self, name, value)
    }

    fn fit_predict(
        &self,
        x: &[Vec<f64>],
        y: &[u8],
        names: &[String],
        eval: &[Vec<f64>],
    ) -> Result<Vec<f64>, ModelError> {
        Ok(train_gbdt_matrix(x, y, names.to_vec(), self)?.model.predict_matrix(eval))
    }

    fn complexity(&self) -> (usize, usize) {
        (self.n_estimators, self.max_depth)
    }
}

impl Tunable for MlpConfig {
    fn set_param(&mut self, name: &str, value: &Value) -> Result<(), ParamError> {
        MlpConfig::set_param(self, name, value)
    }

    fn fit_predict(
        &self,
        x: &[Vec<f64>],
        y: &[u8],
        names: &[String],
        eval: &[Vec<f64>],
    ) -> Result<Vec<f64>, ModelError> {
        Ok(train_mlp_matrix(x, y, names.to_vec(), self)?.model.predict_matrix(eval))
    }

    fn complexity(&self) -> (usize, usize) {
        (self.max_epochs, self.hidden_units.iter().sum())
    }
}

/// Cartesian product of the grid in key order, last key varying fastest.
pub fn expand_grid(grid: &Grid) -> Result<Vec<BTreeMap<String, Value>>, TuningError> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(TuningError::EmptyGrid);
    }
    let mut points = vec![BTreeMap::new()];
    for (name, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut p = p.clone();
                    p.insert(name.clone(), v.clone());
                    p
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: BTreeMap<String, Value>,
    pub fold_scores: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone)]
pub struct TuningResult<C> {
    pub best: C,
    pub best_index: usize,
    /// One entry per grid point, in [`expand_grid`] order.
    pub candidates: Vec<Candidate>,
}

impl<C> TuningResult<C> {
    /// Candidates x folds.
    pub fn fold_scores(&self) -> Vec<Vec<f64>> {
        self.candidates.iter().map(|c| c.fold_scores.clone()).collect()
    }
}

/// Evaluates every grid point applied on top of `base` with the same
/// stratified folds, and keeps the one with the highest mean AUC. Ties go
/// to the smaller [`Tunable::complexity`], then to the earlier grid point.
pub fn grid_search<C: Tunable>(
    x: &[Vec<f64>],
    y: &[u8],
    names: &[String],
    base: &C,
    grid: &Grid,
    folds: usize,
    seed: u64,
) -> Result<TuningResult<C>, TuningError> {
    if folds < 2 {
        return Err(TuningError::TooFewFolds(folds));
    }
    let points = expand_grid(grid)?;
    let configs = points
        .iter()
        .map(|p| {
            let mut c = base.clone();
            for (k, v) in p {
                c.set_param(k, v)?;
            }
            Ok(c)
        })
        .collect::<Result<Vec<C>, TuningError>>()?;
    let fold_sets = stratified_kfold(y, folds, seed)?;
    let mut held_out = vec![usize::MAX; y.len()];
    for (f, rows) in fold_sets.iter().enumerate() {
        rows.iter().for_each(|&i| held_out[i] = f);
    }

    let mut candidates = Vec::with_capacity(configs.len());
    for (params, config) in points.into_iter().zip(&configs) {
        let mut fold_scores = Vec::with_capacity(folds);
        for (f, val) in fold_sets.iter().enumerate() {
            let train: Vec<usize> = (0..y.len()).filter(|&i| held_out[i] != f).collect();
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let xv: Vec<Vec<f64>> = val.iter().map(|&i| x[i].clone()).collect();
            let yv: Vec<u8> = val.iter().map(|&i| y[i]).collect();
            let scores = config.fit_predict(&xt, &yt, names, &xv)?;
            fold_scores.push(roc_auc(&scores, &yv)?);
        }
        let mean_auc = fold_scores.iter().sum::<f64>() / folds as f64;
        candidates.push(Candidate { params, fold_scores, mean_auc });
    }

    let mut best_index = 0;
    for i in 1..candidates.len() {
        let (a, b) = (candidates[i].mean_auc, candidates[best_index].mean_auc);
        if a > b || (a == b && configs[i].complexity() < configs[best_index].complexity()) {
            best_index = i;
        }
    }
    Ok(TuningResult { best: configs[best_index].clone(), best_index, candidates })
}

pub fn grid_search_table<C: Tunable>(
    table: &FeatureTable,
    base: &C,
    grid: &Grid,
    folds: usize,
    seed: u64,
) -> Result<TuningResult<C>, TuningError> {
    let names = table.feature_names();
    let x = table.matrix(&names)?;
    let y = table.labels()?;
    grid_search(&x, &y, &names, base, grid, folds, seed)
}
