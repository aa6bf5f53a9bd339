//! Binary classification metrics. Class 1 (vulnerable) is the positive class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{stratified_kfold, DatasetError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty input")]
    Empty,
    #[error("both classes must be present")]
    SingleClass,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        ConfusionMatrix { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Counts outcomes with the inclusive rule `score >= threshold` => positive.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix, MetricsError> {
    check_lengths(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// A ratio that may be undefined (zero denominator). Undefined ratios are
/// reported as 0 with `defined == false`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub defined: bool,
}

impl Ratio {
    fn of(num: f64, den: f64) -> Ratio {
        if den == 0.0 {
            Ratio { value: 0.0, defined: false }
        } else {
            Ratio { value: num / den, defined: true }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

pub fn summary(cm: &ConfusionMatrix) -> Summary {
    let (tn, fp, fn_, tp) = (cm.tn as f64, cm.fp as f64, cm.fn_ as f64, cm.tp as f64);
    let accuracy = Ratio::of(tp + tn, tp + tn + fp + fn_);
    let precision = Ratio::of(tp, tp + fp);
    let recall = Ratio::of(tp, tp + fn_);
    let f1 = if precision.defined && recall.defined {
        Ratio::of(2.0 * precision.value * recall.value, precision.value + recall.value)
    } else {
        Ratio { value: 0.0, defined: false }
    };
    Summary { accuracy, precision, recall, f1 }
}

/// Matthews correlation coefficient.
pub fn mcc(cm: &ConfusionMatrix) -> Ratio {
    let (tn, fp, fn_, tp) = (cm.tn as f64, cm.fp as f64, cm.fn_ as f64, cm.tp as f64);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    Ratio::of(tp * tn - fp * fn_, den)
}

/// Cohen's kappa between predictions and labels.
pub fn kappa(cm: &ConfusionMatrix) -> Ratio {
    let (tn, fp, fn_, tp) = (cm.tn as f64, cm.fp as f64, cm.fn_ as f64, cm.tp as f64);
    let n = tn + fp + fn_ + tp;
    if n == 0.0 {
        return Ratio { value: 0.0, defined: false };
    }
    let observed = (tp + tn) / n;
    let expected = ((tp + fp) * (tp + fn_) + (tn + fn_) * (tn + fp)) / (n * n);
    Ratio::of(observed - expected, 1.0 - expected)
}

/// Midranks (1-based) of `values`, averaging ties.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (labels.len() - pos, pos)
}

/// Area under the ROC curve via the Mann-Whitney U statistic.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(scores, labels)?;
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(MetricsError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let (neg, pos) = (neg as f64, pos as f64);
    let u = pos_rank_sum - pos * (pos + 1.0) / 2.0;
    Ok(u / (pos * neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Cumulative (fp, tp) counts at each distinct score, highest score first.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut fp, mut tp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            out.push((scores[i], fp, tp));
        }
    }
    out
}

/// Precision-recall points (`x` = recall, `y` = precision), one per distinct
/// score threshold, in descending threshold order.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>, MetricsError> {
    check_lengths(scores, labels)?;
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok(sweep(scores, labels)
        .into_iter()
        .map(|(t, fp, tp)| CurvePoint { threshold: t, x: tp as f64 / pos as f64, y: tp as f64 / (tp + fp) as f64 })
        .collect())
}

/// ROC points (`x` = false positive rate, `y` = true positive rate), starting
/// at the origin and then one per distinct threshold in descending order.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>, MetricsError> {
    check_lengths(scores, labels)?;
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut points = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 0.0 }];
    points.extend(sweep(scores, labels).into_iter().map(|(t, fp, tp)| CurvePoint {
        threshold: t,
        x: fp as f64 / neg as f64,
        y: tp as f64 / pos as f64,
    }));
    Ok(points)
}

/// Trapezoidal area under a curve given in increasing-x order.
pub fn trapezoid_area(points: &[CurvePoint]) -> f64 {
    points.windows(2).map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0).sum()
}

/// Everything reported after evaluating a model on labelled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub rows: usize,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub mcc: f64,
    pub kappa: f64,
    /// Names of metrics whose value is undefined and reported as 0.
    pub undefined: Vec<String>,
}

pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport, MetricsError> {
    let cm = confusion(scores, labels, threshold)?;
    let s = summary(&cm);
    let m = mcc(&cm);
    let k = kappa(&cm);
    let auc = roc_auc(scores, labels);
    let mut undefined = Vec::new();
    for (name, r) in [("precision", s.precision), ("recall", s.recall), ("f1", s.f1), ("mcc", m), ("kappa", k)] {
        if !r.defined {
            undefined.push(name.to_string());
        }
    }
    if auc.is_err() {
        undefined.push("auc_roc".to_string());
    }
    Ok(MetricsReport {
        threshold,
        rows: scores.len(),
        confusion: cm,
        accuracy: s.accuracy.value,
        precision: s.precision.value,
        recall: s.recall.value,
        f1: s.f1.value,
        auc_roc: auc.unwrap_or(0.0),
        mcc: m.value,
        kappa: k.value,
        undefined,
    })
}

pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64, MetricsError> {
    Ok(summary(&confusion(scores, labels, threshold)?).accuracy.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub fraction: f64,
    pub train_size: usize,
    pub train_accuracy_mean: f64,
    pub train_accuracy_std: f64,
    pub validation_accuracy_mean: f64,
    pub validation_accuracy_std: f64,
}

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("fractions must lie in (0, 1] and increase strictly")]
    BadFractions,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("trainer failed: {0}")]
    Trainer(String),
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Learning curve by stratified subsampling plus k-fold cross-validation.
///
/// `trainer(x_train, y_train, x_eval)` fits on the training rows and returns
/// scores for `x_eval` (which lists the training rows first, then the
/// validation rows).
pub fn learning_curve<F>(
    x: &[Vec<f64>],
    y: &[u8],
    fractions: &[f64],
    folds: usize,
    seed: u64,
    mut trainer: F,
) -> Result<Vec<LearningCurvePoint>, CurveError>
where
    F: FnMut(&[Vec<f64>], &[u8], &[Vec<f64>]) -> Result<Vec<f64>, String>,
{
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) || fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CurveError::BadFractions);
    }
    let mut out = Vec::new();
    for (step, &fraction) in fractions.iter().enumerate() {
        let subset: Vec<usize> = if fraction >= 1.0 {
            (0..y.len()).collect()
        } else {
            let (_, keep) = crate::dataset::stratified_split_indices(y, fraction, seed.wrapping_add(step as u64))?;
            keep
        };
        let sub_y: Vec<u8> = subset.iter().map(|&i| y[i]).collect();
        let fold_sets = stratified_kfold(&sub_y, folds, seed)?;
        let mut train_acc = Vec::new();
        let mut val_acc = Vec::new();
        let mut train_size = 0;
        for held_out in &fold_sets {
            let mut is_val = vec![false; subset.len()];
            held_out.iter().for_each(|&i| is_val[i] = true);
            let tr: Vec<usize> = (0..subset.len()).filter(|&i| !is_val[i]).map(|i| subset[i]).collect();
            let va: Vec<usize> = held_out.iter().map(|&i| subset[i]).collect();
            let xt: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
            let yv: Vec<u8> = va.iter().map(|&i| y[i]).collect();
            let eval: Vec<Vec<f64>> = tr.iter().chain(&va).map(|&i| x[i].clone()).collect();
            let scores = trainer(&xt, &yt, &eval).map_err(CurveError::Trainer)?;
            train_acc.push(accuracy(&scores[..tr.len()], &yt, DEFAULT_THRESHOLD)?);
            val_acc.push(accuracy(&scores[tr.len()..], &yv, DEFAULT_THRESHOLD)?);
            train_size = tr.len();
        }
        let (tm, ts) = mean_std(&train_acc);
        let (vm, vs) = mean_std(&val_acc);
        out.push(LearningCurvePoint {
            fraction,
            train_size,
            train_accuracy_mean: tm,
            train_accuracy_std: ts,
            validation_accuracy_mean: vm,
            validation_accuracy_std: vs,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUBLISHED_CM: ConfusionMatrix = ConfusionMatrix { tn: 31040, fp: 3465, fn_: 4092, tp: 16617 };

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), ConfusionMatrix::new(1, 0, 0, 1));
        let cm = confusion(&[0.5; 4], &[0, 1, 0, 1], 0.5).unwrap();
        assert_eq!((cm.tp + cm.fp, cm.tn + cm.fn_), (4, 0));
        let cm = confusion(&[1.0, 0.0, 1.0], &[1, 0, 1], 0.5).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        assert_eq!(confusion(&[0.1], &[1, 0], 0.5), Err(MetricsError::LengthMismatch { scores: 1, labels: 2 }));
    }

    #[test]
    fn summary_matches_published_percentages() {
        let s = summary(&PUBLISHED_CM);
        for (got, want) in [(s.accuracy, 0.8631), (s.precision, 0.8275), (s.recall, 0.8024), (s.f1, 0.8147)] {
            assert!(got.defined);
            assert!((got.value - want).abs() <= 1e-4, "{} vs {want}", got.value);
        }
    }

    #[test]
    fn summary_edge_cases() {
        let s = summary(&ConfusionMatrix::new(5, 0, 3, 0));
        assert_eq!(s.precision, Ratio { value: 0.0, defined: false });
        assert!(!s.f1.defined);
        let s = summary(&ConfusionMatrix::new(4, 0, 0, 6));
        for r in [s.accuracy, s.precision, s.recall, s.f1] {
            assert_eq!(r.value, 1.0);
        }
    }

    #[test]
    fn mcc_and_kappa() {
        let perfect = ConfusionMatrix::new(4, 0, 0, 6);
        assert_eq!(mcc(&perfect).value, 1.0);
        assert_eq!(kappa(&perfect).value, 1.0);
        // Frozen from an exact rational evaluation of the textbook formulas
        // (python fractions + decimal sqrt) on the published counts.
        assert!((mcc(&PUBLISHED_CM).value - 0.706_469_144_330_016_1).abs() < 1e-12);
        assert!((kappa(&PUBLISHED_CM).value - 0.706_259_302_440_811_2).abs() < 1e-12);
        let all_positive = ConfusionMatrix::new(0, 5, 0, 7);
        assert_eq!(mcc(&all_positive), Ratio { value: 0.0, defined: false });
    }

    #[test]
    fn mcc_kappa_symmetric_under_class_swap() {
        let cm = ConfusionMatrix::new(13, 4, 7, 21);
        let swapped = ConfusionMatrix::new(cm.tp, cm.fn_, cm.fp, cm.tn);
        assert!((mcc(&cm).value - mcc(&swapped).value).abs() < 1e-15);
        assert!((kappa(&cm).value - kappa(&swapped).value).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn auc_equals_roc_trapezoid() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.2, 0.9];
        let labels = [0, 0, 1, 1, 1, 0, 0];
        let area = trapezoid_area(&roc_curve(&scores, &labels).unwrap());
        assert!((area - roc_auc(&scores, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pr_curve_examples() {
        let pts = pr_curve(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert!(pts.iter().any(|p| p.x == 1.0 && p.y == 1.0));
        let pts = pr_curve(&[0.5; 5], &[1, 0, 0, 1, 0]).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].x, pts[0].y), (1.0, 0.4));
        // Brute-force sweep over each distinct threshold.
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0, 0, 1, 1];
        let pts = pr_curve(&scores, &labels).unwrap();
        let mut thresholds = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(pts.len(), thresholds.len());
        for (p, t) in pts.iter().zip(thresholds) {
            let cm = confusion(&scores, &labels, t).unwrap();
            assert_eq!(p.threshold, t);
            assert_eq!(p.x, cm.tp as f64 / 2.0);
            assert_eq!(p.y, cm.tp as f64 / (cm.tp + cm.fp) as f64);
        }
    }

    #[test]
    fn evaluate_flags_undefined() {
        let r = evaluate(&[0.1, 0.2, 0.3], &[0, 1, 0], 0.5).unwrap();
        assert!(r.undefined.contains(&"precision".to_string()));
        assert_eq!(r.accuracy, 2.0 / 3.0);
    }

    fn nearest_neighbour(xt: &[Vec<f64>], yt: &[u8], eval: &[Vec<f64>]) -> Result<Vec<f64>, String> {
        Ok(eval
            .iter()
            .map(|q| {
                let best = xt
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        let da: f64 = a.1.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum();
                        let db: f64 = b.1.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                f64::from(yt[best.0])
            })
            .collect())
    }

    #[test]
    fn learning_curve_memorizer() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let y: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
        let curve = learning_curve(&x, &y, &[0.5, 1.0], 2, 3, nearest_neighbour).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[1].train_size, 30);
        assert!(curve.iter().all(|p| p.train_accuracy_mean == 1.0 && p.train_accuracy_std == 0.0));
        let again = learning_curve(&x, &y, &[0.5, 1.0], 2, 3, nearest_neighbour).unwrap();
        assert_eq!(curve, again);
        assert!(matches!(learning_curve(&x, &y, &[0.5, 0.4], 2, 3, nearest_neighbour), Err(CurveError::BadFractions)));
    }
}
