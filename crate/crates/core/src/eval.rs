//! Confusion counts and the per-class / macro metric set.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{ExitOutcome, Month};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no evaluated jobs")]
    EmptyEvaluation,
}

/// Binary confusion counts with `Failed` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn accumulate(mut self, predicted: ExitOutcome, actual: ExitOutcome) -> Self {
        self.record(predicted, actual);
        self
    }

    pub fn record(&mut self, predicted: ExitOutcome, actual: ExitOutcome) {
        use ExitOutcome::*;
        match (predicted, actual) {
            (Failed, Failed) => self.tp += 1,
            (Failed, Completed) => self.fp += 1,
            (Completed, Completed) => self.tn += 1,
            (Completed, Failed) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with `Completed` taken as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
        }
    }

    fn mean(items: &[ClassMetrics]) -> Self {
        let n = items.len() as f64;
        ClassMetrics {
            precision: items.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: items.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub completed: ClassMetrics,
    pub failed: ClassMetrics,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
}

impl MetricsReport {
    /// Field-wise unweighted mean of several reports.
    pub fn mean(reports: &[MetricsReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let pick = |f: fn(&MetricsReport) -> ClassMetrics| {
            ClassMetrics::mean(&reports.iter().map(f).collect::<Vec<_>>())
        };
        Some(MetricsReport {
            completed: pick(|r| r.completed),
            failed: pick(|r| r.failed),
            macro_avg: pick(|r| r.macro_avg),
        })
    }
}

/// Per-class precision/recall/F1 plus their unweighted macro average.
/// Zero denominators yield 0.
pub fn compute_metrics(counts: &ConfusionCounts) -> Result<MetricsReport, EvalError> {
    if counts.total() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let failed = ClassMetrics::from_pr(
        ratio(counts.tp, counts.tp + counts.fp),
        ratio(counts.tp, counts.tp + counts.fn_),
    );
    let completed = ClassMetrics::from_pr(
        ratio(counts.tn, counts.tn + counts.fn_),
        ratio(counts.tn, counts.tn + counts.fp),
    );
    let macro_avg = ClassMetrics::mean(&[completed, failed]);
    Ok(MetricsReport {
        completed,
        failed,
        macro_avg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthReport {
    pub month: Month,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyAggregate {
    pub months: Vec<MonthReport>,
    /// Unweighted mean of the monthly reports.
    pub mean: MetricsReport,
    /// Metrics over all counts pooled together.
    pub pooled: MetricsReport,
    pub pooled_counts: ConfusionCounts,
    pub warnings: Vec<String>,
}

/// Sums counts within each calendar month, computes metrics per month and
/// averages them across months. Empty months are skipped with a warning.
pub fn aggregate_monthly(daily: &[(NaiveDate, ConfusionCounts)]) -> Result<MonthlyAggregate, EvalError> {
    let mut by_month: BTreeMap<Month, ConfusionCounts> = BTreeMap::new();
    for (date, counts) in daily {
        *by_month
            .entry(Month {
                year: date.year(),
                month: date.month(),
            })
            .or_default() += *counts;
    }
    let mut warnings = Vec::new();
    let mut months = Vec::new();
    let mut pooled_counts = ConfusionCounts::default();
    for (month, counts) in by_month {
        pooled_counts += counts;
        match compute_metrics(&counts) {
            Ok(metrics) => months.push(MonthReport {
                month,
                counts,
                metrics,
            }),
            Err(EvalError::EmptyEvaluation) => {
                warnings.push(format!("month {month} has no evaluated jobs; skipped"))
            }
        }
    }
    let reports: Vec<MetricsReport> = months.iter().map(|m| m.metrics).collect();
    let mean = MetricsReport::mean(&reports).ok_or(EvalError::EmptyEvaluation)?;
    Ok(MonthlyAggregate {
        months,
        mean,
        pooled: compute_metrics(&pooled_counts)?,
        pooled_counts,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ExitOutcome::*;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn accumulate_increments_one_cell() {
        assert_eq!(ConfusionCounts::default().accumulate(Failed, Failed), counts(1, 0, 0, 0));
        assert_eq!(ConfusionCounts::default().accumulate(Completed, Failed), counts(0, 0, 0, 1));
        assert_eq!(ConfusionCounts::default().accumulate(Failed, Completed), counts(0, 1, 0, 0));
        assert_eq!(ConfusionCounts::default().accumulate(Completed, Completed), counts(0, 0, 1, 0));
    }

    #[test]
    fn hand_computed_failed_class() {
        let m = compute_metrics(&counts(3, 1, 4, 2)).unwrap();
        assert!((m.failed.precision - 0.75).abs() < 1e-15);
        assert!((m.failed.recall - 0.6).abs() < 1e-15);
        // 2 * 0.75 * 0.6 / 1.35
        assert!((m.failed.f1 - 2.0 / 3.0).abs() < 1e-12);
        // completed: P = 4/6, R = 4/5
        assert!((m.completed.precision - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.completed.recall - 0.8).abs() < 1e-15);
    }

    #[test]
    fn all_completed_predictions_match_majority_row() {
        let m = compute_metrics(&counts(0, 0, 90, 10)).unwrap();
        assert_eq!(m.completed.recall, 1.0);
        assert_eq!(m.failed.precision, 0.0);
        assert_eq!(m.failed.recall, 0.0);
        assert_eq!(m.failed.f1, 0.0);
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let m = compute_metrics(&counts(10, 0, 90, 0)).unwrap();
        for c in [m.completed, m.failed, m.macro_avg] {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn empty_counts_are_an_error() {
        assert_eq!(compute_metrics(&counts(0, 0, 0, 0)), Err(EvalError::EmptyEvaluation));
        assert_eq!(aggregate_monthly(&[]), Err(EvalError::EmptyEvaluation));
    }

    fn day(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, d).unwrap()
    }

    #[test]
    fn single_month_mean_is_that_month() {
        let agg = aggregate_monthly(&[(day(6, 1), counts(1, 2, 3, 4)), (day(6, 9), counts(1, 0, 1, 0))])
            .unwrap();
        assert_eq!(agg.months.len(), 1);
        assert_eq!(agg.months[0].counts, counts(2, 2, 4, 4));
        assert_eq!(agg.mean, agg.months[0].metrics);
        assert_eq!(agg.pooled, agg.mean);
    }

    #[test]
    fn identical_months_average_to_either() {
        let agg = aggregate_monthly(&[(day(6, 1), counts(3, 1, 4, 2)), (day(7, 1), counts(3, 1, 4, 2))])
            .unwrap();
        let one = compute_metrics(&counts(3, 1, 4, 2)).unwrap();
        assert!((agg.mean.failed.f1 - one.failed.f1).abs() < 1e-15);
        assert!((agg.mean.macro_avg.precision - one.macro_avg.precision).abs() < 1e-15);
    }

    #[test]
    fn three_months_hand_average() {
        // June: tp=2 fp=2 tn=6 fn=0 -> F P=.5 R=1 F1=2/3 ; C P=1 R=.75 F1=6/7
        // July: tp=0 fp=0 tn=5 fn=5 -> F 0,0,0 ; C P=.5 R=1 F1=2/3
        // Aug:  tp=1 fp=1 tn=1 fn=1 -> F .5,.5,.5 ; C .5,.5,.5
        let agg = aggregate_monthly(&[
            (day(6, 3), counts(1, 2, 6, 0)),
            (day(6, 20), counts(1, 0, 0, 0)),
            (day(7, 4), counts(0, 0, 5, 5)),
            (day(8, 1), counts(1, 1, 1, 1)),
        ])
        .unwrap();
        let f_f1 = (2.0 / 3.0 + 0.0 + 0.5) / 3.0;
        let c_f1 = (6.0 / 7.0 + 2.0 / 3.0 + 0.5) / 3.0;
        let f_p = (0.5 + 0.0 + 0.5) / 3.0;
        let c_r = (0.75 + 1.0 + 0.5) / 3.0;
        assert!((agg.mean.failed.f1 - f_f1).abs() < 1e-12);
        assert!((agg.mean.completed.f1 - c_f1).abs() < 1e-12);
        assert!((agg.mean.failed.precision - f_p).abs() < 1e-12);
        assert!((agg.mean.completed.recall - c_r).abs() < 1e-12);
        assert!((agg.mean.macro_avg.f1 - (f_f1 + c_f1) / 2.0).abs() < 1e-12);
        assert_eq!(agg.pooled_counts, counts(3, 3, 12, 6));
    }

    #[test]
    fn empty_month_is_skipped_with_warning() {
        let agg = aggregate_monthly(&[(day(6, 1), counts(1, 0, 1, 0)), (day(7, 1), counts(0, 0, 0, 0))])
            .unwrap();
        assert_eq!(agg.months.len(), 1);
        assert_eq!(agg.warnings.len(), 1);
        assert!(agg.warnings[0].contains("2020-07"));
    }

    fn outcome() -> impl Strategy<Value = ExitOutcome> {
        prop_oneof![Just(Completed), Just(Failed)]
    }

    proptest! {
        #[test]
        fn counts_sum_to_stream_length(pairs in prop::collection::vec((outcome(), outcome()), 1..300)) {
            let c = pairs.iter().fold(ConfusionCounts::default(), |c, &(p, a)| c.accumulate(p, a));
            prop_assert_eq!(c.total(), pairs.len() as u64);
        }

        #[test]
        fn swapping_positive_class_swaps_blocks(pairs in prop::collection::vec((outcome(), outcome()), 1..200)) {
            let c = pairs.iter().fold(ConfusionCounts::default(), |c, &(p, a)| c.accumulate(p, a));
            let m = compute_metrics(&c).unwrap();
            let s = compute_metrics(&c.swapped()).unwrap();
            prop_assert_eq!(m.completed, s.failed);
            prop_assert_eq!(m.failed, s.completed);
            prop_assert!((m.macro_avg.f1 - s.macro_avg.f1).abs() < 1e-15);
            prop_assert!((m.macro_avg.precision - s.macro_avg.precision).abs() < 1e-15);
        }

        #[test]
        fn metrics_are_scale_free(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50, k in 2u64..5) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let a = compute_metrics(&counts(tp, fp, tn, fn_)).unwrap();
            let b = compute_metrics(&counts(k * tp, k * fp, k * tn, k * fn_)).unwrap();
            prop_assert!((a.failed.f1 - b.failed.f1).abs() < 1e-12);
            prop_assert!((a.completed.f1 - b.completed.f1).abs() < 1e-12);
            prop_assert!((a.macro_avg.recall - b.macro_avg.recall).abs() < 1e-12);
        }
    }
}
