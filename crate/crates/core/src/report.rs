//! Evaluation reports and their tabular rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoding::Encoding;
use crate::eval::{ClassMetrics, MetricsReport, MonthReport};
use crate::learners::{ClassifierSpec, Distance, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Offline,
    Online,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Offline => "offline",
            Setting::Online => "online",
        }
    }
}

/// Which training-window membership rule the online setting used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMembership {
    /// Submitted in `[Tb - alpha, Tb)` and ended before `Tb`.
    #[default]
    Submit,
    /// Ended in `[Tb - alpha, Tb)`.
    End,
}

/// Run parameters; options that do not apply to the setting are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub alpha: Option<u32>,
    pub omega: Option<u32>,
    pub split: Option<f64>,
    pub seed: u64,
    pub knn_evict: Option<bool>,
    pub window_membership: Option<WindowMembership>,
}

/// Wall-clock timing. `train_s_per_day` is `None` when nothing is trained
/// (KNN only extends its reference set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub train_s_per_day: Option<f64>,
    pub infer_s_per_job: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub encoding: Encoding,
    pub setting: Setting,
    pub config: ReportConfig,
    pub monthly: Vec<MonthReport>,
    pub monthly_mean: MetricsReport,
    pub pooled: MetricsReport,
    pub timing: TimingStats,
    pub skipped: u64,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Pooled counts offline, the mean of monthly reports online.
    pub fn headline(&self) -> &MetricsReport {
        match self.setting {
            Setting::Offline => &self.pooled,
            Setting::Online => &self.monthly_mean,
        }
    }

    /// JSON with the timing block replaced by `null`; identical runs give
    /// identical strings.
    pub fn to_json_without_timing(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serialises");
        value["timing"] = serde_json::Value::Null;
        serde_json::to_string_pretty(&value).expect("report serialises")
    }

    /// Table row name such as `INT+RF`, `SB+MWD` or `Majority`.
    pub fn row_label(&self) -> String {
        let m = self.model.as_str();
        let algo = match m {
            "dt" => "DT".to_string(),
            "rf" => "RF".to_string(),
            "lr" => "LR".to_string(),
            "majority" => return "Majority".to_string(),
            "random" => return "Random".to_string(),
            _ if m.starts_with("knn-cd") => "CD".to_string(),
            _ if m.starts_with("knn-mwd") => {
                let p = m
                    .trim_start_matches("knn-mwd")
                    .split('-')
                    .next()
                    .unwrap_or("2");
                if p == "2" {
                    "MWD".to_string()
                } else {
                    format!("MWD{p}")
                }
            }
            other => other.to_uppercase(),
        };
        format!("{}+{}", self.encoding, algo)
    }
}

/// Compact model identifier used in reports, e.g. `rf` or `knn-mwd2-k5`.
pub fn model_string(spec: &ClassifierSpec) -> String {
    match spec.kind {
        ModelKind::Knn => match spec.distance {
            Distance::Cosine => format!("knn-cd-k{}", spec.k),
            Distance::Minkowski => format!("knn-mwd{}-k{}", spec.p, spec.k),
        },
        kind => kind.as_str().to_string(),
    }
}

pub const TABLE_COLUMNS: [&str; 11] = [
    "Model", "T F1m", "T Precm", "T Recm", "C F1", "C Prec", "C Rec", "F F1", "F Prec", "F Rec", "Time",
];

fn metric_cells(m: &MetricsReport) -> [f64; 9] {
    let c = |x: &ClassMetrics| [x.f1, x.precision, x.recall];
    let [a, b, d] = c(&m.macro_avg);
    let [e, f, g] = c(&m.completed);
    let [h, i, j] = c(&m.failed);
    [a, b, d, e, f, g, h, i, j]
}

fn time_cell(r: &EvalReport) -> String {
    let kind = r.model.as_str();
    if kind == "majority" || kind == "random" {
        return "N.A.".to_string();
    }
    let train = r
        .timing
        .train_s_per_day
        .map_or_else(|| "N.A.".to_string(), |t| format!("{t:.3}"));
    format!("{train} + {:.4}", r.timing.infer_s_per_job)
}

/// Fixed-width results table, one row per report. The best
/// value of each metric column (at the displayed precision) carries a `*`.
pub fn render_table(reports: &[EvalReport]) -> String {
    let rows: Vec<(String, [String; 9], String)> = reports
        .iter()
        .map(|r| {
            let cells = metric_cells(r.headline()).map(|v| format!("{v:.2}"));
            (r.row_label(), cells, time_cell(r))
        })
        .collect();
    let mut best: [String; 9] = Default::default();
    for (_, cells, _) in &rows {
        for (b, c) in best.iter_mut().zip(cells) {
            if c.parse::<f64>().unwrap_or(f64::MIN) > b.parse::<f64>().unwrap_or(f64::MIN) {
                *b = c.clone();
            }
        }
    }
    let label_width = rows
        .iter()
        .map(|r| r.0.len())
        .chain([TABLE_COLUMNS[0].len()])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", TABLE_COLUMNS[0]);
    for col in &TABLE_COLUMNS[1..10] {
        let _ = write!(out, " | {col:>7}");
    }
    let _ = writeln!(out, " | {}", TABLE_COLUMNS[10]);
    for (label, cells, time) in &rows {
        let _ = write!(out, "{label:<label_width$}");
        for (c, b) in cells.iter().zip(&best) {
            let marked = if c == b { format!("{c}*") } else { c.clone() };
            let _ = write!(out, " | {marked:>7}");
        }
        let _ = writeln!(out, " | {time}");
    }
    out
}
