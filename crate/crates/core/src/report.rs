//! Per-row prediction listings with confidence filters and summary counts.
//! Shared by the offline `predict` command and the HTTP service.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureTable;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::{Classifier, ModelError};

pub const DEFAULT_HIGH_THRESHOLD: f64 = 0.90;
pub const DEFAULT_SURE_THRESHOLD: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub high: f64,
    pub sure: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { high: DEFAULT_HIGH_THRESHOLD, sure: DEFAULT_SURE_THRESHOLD }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        if DEFAULT_THRESHOLD <= self.high && self.high <= self.sure && self.sure <= 1.0 {
            Ok(())
        } else {
            Err(format!("thresholds must satisfy 0.5 <= high <= sure <= 1 (high {}, sure {})", self.high, self.sure))
        }
    }
}

/// Which rows a listing keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    /// Every predicted-vulnerable row (probability >= 0.5).
    All,
    /// Probability >= the high-confidence threshold.
    High,
    /// Probability >= the near-certainty threshold.
    Sure,
}

impl Filter {
    pub fn threshold(self, t: &Thresholds) -> f64 {
        match self {
            Filter::All => DEFAULT_THRESHOLD,
            Filter::High => t.high,
            Filter::Sure => t.sure,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Filter::All => "all",
            Filter::High => "high",
            Filter::Sure => "sure",
        }
    }
}

impl FromStr for Filter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Filter::All),
            "high" => Ok(Filter::High),
            "sure" => Ok(Filter::Sure),
            other => Err(format!("unknown filter `{other}` (expected all, high or sure)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub name: String,
    pub probability: f64,
    pub predicted: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub total: usize,
    pub vulnerable: usize,
    pub safe: usize,
    /// Half-open probability ranges covering `[0, 1]`; counts sum to `total`.
    pub buckets: Vec<Bucket>,
}

const BUCKET_EDGES: [f64; 5] = [0.0, 0.5, 0.7, DEFAULT_HIGH_THRESHOLD, DEFAULT_SURE_THRESHOLD];
const BUCKET_LABELS: [&str; 5] = ["[0,0.5)", "[0.5,0.7)", "[0.7,0.9)", "[0.9,1-1e-6)", "[1-1e-6,1]"];

pub fn summarize(probabilities: &[f64]) -> SummaryStats {
    let mut buckets: Vec<Bucket> = BUCKET_LABELS
        .iter()
        .enumerate()
        .map(|(i, label)| Bucket {
            label: label.to_string(),
            lower: BUCKET_EDGES[i],
            upper: BUCKET_EDGES.get(i + 1).copied().unwrap_or(1.0),
            count: 0,
        })
        .collect();
    for &p in probabilities {
        let i = BUCKET_EDGES.iter().rposition(|&e| p >= e).unwrap_or(0);
        buckets[i].count += 1;
    }
    let vulnerable = probabilities.iter().filter(|&&p| p >= DEFAULT_THRESHOLD).count();
    SummaryStats { total: probabilities.len(), vulnerable, safe: probabilities.len() - vulnerable, buckets }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub stats: SummaryStats,
    pub records: Vec<PredictionRecord>,
}

/// Records for rows passing `filter`, in table order, plus stats over every
/// row.
pub fn build_report(
    names: &[String],
    probabilities: &[f64],
    filter: Filter,
    thresholds: &Thresholds,
) -> PredictionReport {
    let cut = filter.threshold(thresholds);
    let records = names
        .iter()
        .zip(probabilities)
        .filter(|(_, &p)| p >= cut)
        .map(|(n, &p)| PredictionRecord {
            name: n.clone(),
            probability: p,
            predicted: u8::from(p >= DEFAULT_THRESHOLD),
        })
        .collect();
    PredictionReport { stats: summarize(probabilities), records }
}

pub fn predict_report<C: Classifier + ?Sized>(
    model: &C,
    table: &FeatureTable,
    filter: Filter,
    thresholds: &Thresholds,
) -> Result<PredictionReport, ModelError> {
    let probabilities = model.predict_table(table)?;
    Ok(build_report(&table.row_names(), &probabilities, filter, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets_partition_unit_interval() {
        let s = summarize(&[0.0, 0.49, 0.5, 0.69, 0.7, 0.9, 0.9999, 1.0 - 1e-6, 1.0]);
        let counts: Vec<usize> = s.buckets.iter().map(|b| b.count).collect();
        assert_eq!(counts, [2, 2, 1, 2, 2]);
        assert_eq!((s.total, s.vulnerable, s.safe), (9, 7, 2));
        assert_eq!(counts.iter().sum::<usize>(), s.total);
    }

    #[test]
    fn filters_nest() {
        let names: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
        let p = [0.3, 0.5, 0.89, 0.9, 0.999_999_5, 1.0];
        let t = Thresholds::default();
        let all = build_report(&names, &p, Filter::All, &t);
        let high = build_report(&names, &p, Filter::High, &t);
        let sure = build_report(&names, &p, Filter::Sure, &t);
        let n = |r: &PredictionReport| r.records.iter().map(|x| x.name.clone()).collect::<Vec<_>>();
        assert_eq!(n(&all), ["f1", "f2", "f3", "f4", "f5"]);
        assert_eq!(n(&high), ["f3", "f4", "f5"]);
        assert_eq!(n(&sure), ["f4", "f5"]);
        assert!(all.records.iter().all(|r| r.predicted == 1));
        assert_eq!(all.stats, sure.stats);
    }

    #[test]
    fn low_scores_give_empty_listing() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r = build_report(&names, &[0.3, 0.3], Filter::All, &Thresholds::default());
        assert!(r.records.is_empty());
        assert_eq!(r.stats.total, 2);
    }

    #[test]
    fn threshold_order_is_checked() {
        assert!(Thresholds::default().validate().is_ok());
        assert!(Thresholds { high: 0.4, sure: 0.9 }.validate().is_err());
        assert!(Thresholds { high: 0.95, sure: 0.9 }.validate().is_err());
        assert_eq!("sure".parse::<Filter>(), Ok(Filter::Sure));
        assert!("most".parse::<Filter>().is_err());
    }
}
