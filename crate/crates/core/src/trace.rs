//! Job records, exit outcomes and the exit-code relabeling policy.
//!
//! Scheduler-assigned exit states are not trusted as labels: a job is
//! `Completed` when its exit code is 0 and `Failed` otherwise. Jobs the
//! scheduler marked as cancelled (user action) or node-fail (hardware) carry
//! no information about endogenous failures and are excluded outright.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the labeling operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("job {job_id} has not finished (missing end time or exit code)")]
    UnfinishedJob { job_id: u64 },
    #[error("trace is empty")]
    EmptyTrace,
}

/// State recorded by the workload manager when the job left the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OriginalState {
    Completed,
    Failed,
    Cancelled,
    Timeout,
    OutOfMemory,
    Preempted,
    NodeFail,
}

impl OriginalState {
    pub const ALL: [OriginalState; 7] = [
        OriginalState::Completed,
        OriginalState::Failed,
        OriginalState::Cancelled,
        OriginalState::Timeout,
        OriginalState::OutOfMemory,
        OriginalState::Preempted,
        OriginalState::NodeFail,
    ];

    /// Slurm-style upper-case token used in trace files.
    pub fn as_str(self) -> &'static str {
        match self {
            OriginalState::Completed => "COMPLETED",
            OriginalState::Failed => "FAILED",
            OriginalState::Cancelled => "CANCELLED",
            OriginalState::Timeout => "TIMEOUT",
            OriginalState::OutOfMemory => "OUT_OF_MEMORY",
            OriginalState::Preempted => "PREEMPTED",
            OriginalState::NodeFail => "NODE_FAIL",
        }
    }

    /// States whose jobs are dropped before labeling.
    pub fn is_excluded(self) -> bool {
        matches!(self, OriginalState::Cancelled | OriginalState::NodeFail)
    }
}

impl fmt::Display for OriginalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown job state `{0}`")]
pub struct UnknownState(pub String);

impl FromStr for OriginalState {
    type Err = UnknownState;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OriginalState::ALL
            .into_iter()
            .find(|state| state.as_str() == s)
            .ok_or_else(|| UnknownState(s.to_string()))
    }
}

/// Binary job label. `Failed` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExitOutcome {
    Completed,
    Failed,
}

impl ExitOutcome {
    pub fn from_exit_code(code: u32) -> Self {
        if code == 0 {
            ExitOutcome::Completed
        } else {
            ExitOutcome::Failed
        }
    }

    pub fn is_failed(self) -> bool {
        self == ExitOutcome::Failed
    }

    pub fn other(self) -> Self {
        match self {
            ExitOutcome::Completed => ExitOutcome::Failed,
            ExitOutcome::Failed => ExitOutcome::Completed,
        }
    }
}

impl fmt::Display for ExitOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitOutcome::Completed => f.write_str("COMPLETED"),
            ExitOutcome::Failed => f.write_str("FAILED"),
        }
    }
}

/// One submitted job: the fifteen submit-time features plus lifecycle data.
///
/// `time_limit` of `None` means an unlimited ("infinite") limit. Unfinished
/// jobs have no `end_time`, `exit_code` or `original_state`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub name: String,
    pub command: String,
    pub account: String,
    pub user_id: u32,
    pub dependency: String,
    pub group_id: u32,
    pub requested_nodes: Vec<String>,
    pub num_tasks_per_socket: Option<u32>,
    pub partition: String,
    /// Minutes.
    pub time_limit: Option<u32>,
    pub qos: String,
    pub num_cpu: u32,
    pub num_nodes: u32,
    pub num_gpus: u32,
    pub submit_time: DateTime<Utc>,
    pub start_time: Option<DateTime<Utc>>,
    pub end_time: Option<DateTime<Utc>>,
    /// First element of the scheduler's exit-code pair.
    pub exit_code: Option<u32>,
    pub original_state: Option<OriginalState>,
}

impl JobRecord {
    pub fn is_finished(&self) -> bool {
        self.end_time.is_some() && self.exit_code.is_some()
    }

    /// Checks the lifecycle ordering and completeness constraints.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(start) = self.start_time {
            if start < self.submit_time {
                return Err(format!("job {}: start_time precedes submit_time", self.job_id));
            }
        }
        if let Some(end) = self.end_time {
            let lower = self.start_time.unwrap_or(self.submit_time);
            if end < lower {
                return Err(format!("job {}: end_time precedes start/submit time", self.job_id));
            }
            if self.exit_code.is_none() {
                return Err(format!("job {}: finished job without exit_code", self.job_id));
            }
        }
        if self.num_cpu == 0 || self.num_nodes == 0 {
            return Err(format!("job {}: num_cpu and num_nodes must be >= 1", self.job_id));
        }
        Ok(())
    }
}

/// A finished job together with its exit-code label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledJob {
    pub record: JobRecord,
    pub outcome: ExitOutcome,
}

impl LabeledJob {
    pub fn end_time(&self) -> DateTime<Utc> {
        self.record
            .end_time
            .expect("labeled jobs always carry an end time")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Relabeled {
    Labeled(LabeledJob),
    Excluded(OriginalState),
}

/// Applies the exit-code labeling policy to one finished record.
pub fn relabel(record: JobRecord) -> Result<Relabeled, LabelError> {
    let (Some(_), Some(code)) = (record.end_time, record.exit_code) else {
        return Err(LabelError::UnfinishedJob {
            job_id: record.job_id,
        });
    };
    if let Some(state) = record.original_state.filter(|s| s.is_excluded()) {
        return Ok(Relabeled::Excluded(state));
    }
    Ok(Relabeled::Labeled(LabeledJob {
        outcome: ExitOutcome::from_exit_code(code),
        record,
    }))
}

/// Per-state row of an [`AuditReport`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StateAudit {
    pub count: usize,
    pub percent: f64,
    /// Records in this state whose exit code is 0.
    pub exit_zero: usize,
    pub exit_nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub total: usize,
    /// Records skipped because they have not finished.
    pub unfinished: usize,
    /// State other than completed, exit code 0.
    pub not_completed_exit_zero: usize,
    /// State completed, exit code non-zero.
    pub completed_exit_nonzero: usize,
    /// Records whose state is missing entirely.
    pub missing_state: usize,
    pub by_state: BTreeMap<OriginalState, StateAudit>,
}

/// Counts label/exit-code disagreements and the state distribution.
pub fn audit_labels(trace: &[JobRecord]) -> Result<AuditReport, LabelError> {
    if trace.is_empty() {
        return Err(LabelError::EmptyTrace);
    }
    let mut report = AuditReport {
        total: 0,
        unfinished: 0,
        not_completed_exit_zero: 0,
        completed_exit_nonzero: 0,
        missing_state: 0,
        by_state: BTreeMap::new(),
    };
    for record in trace {
        let Some(code) = record.exit_code.filter(|_| record.end_time.is_some()) else {
            report.unfinished += 1;
            continue;
        };
        report.total += 1;
        let Some(state) = record.original_state else {
            report.missing_state += 1;
            continue;
        };
        let row = report.by_state.entry(state).or_default();
        row.count += 1;
        if code == 0 {
            row.exit_zero += 1;
            if state != OriginalState::Completed {
                report.not_completed_exit_zero += 1;
            }
        } else {
            row.exit_nonzero += 1;
            if state == OriginalState::Completed {
                report.completed_exit_nonzero += 1;
            }
        }
    }
    if report.total > 0 {
        for row in report.by_state.values_mut() {
            row.percent = 100.0 * row.count as f64 / report.total as f64;
        }
    }
    Ok(report)
}

/// Calendar month in UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn of(t: DateTime<Utc>) -> Self {
        Month {
            year: t.year(),
            month: t.month(),
        }
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Serialize for Month {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| serde::de::Error::custom(format!("bad month `{s}`")))?;
        let year = y.parse().map_err(serde::de::Error::custom)?;
        let month: u32 = m.parse().map_err(serde::de::Error::custom)?;
        if !(1..=12).contains(&month) {
            return Err(serde::de::Error::custom(format!("bad month `{s}`")));
        }
        Ok(Month { year, month })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MonthlyCount {
    pub month: Month,
    pub completed: usize,
    pub failed: usize,
}

/// Buckets labeled jobs by the calendar month of their submission.
pub fn monthly_distribution(jobs: &[LabeledJob]) -> Vec<MonthlyCount> {
    let mut buckets: BTreeMap<Month, (usize, usize)> = BTreeMap::new();
    for job in jobs {
        let entry = buckets.entry(Month::of(job.record.submit_time)).or_default();
        match job.outcome {
            ExitOutcome::Completed => entry.0 += 1,
            ExitOutcome::Failed => entry.1 += 1,
        }
    }
    buckets
        .into_iter()
        .map(|(month, (completed, failed))| MonthlyCount {
            month,
            completed,
            failed,
        })
        .collect()
}
