//! CSV trace files.
//!
//! The on-disk layout is fixed: twenty columns in the order of [`HEADER`],
//! RFC-4180 quoting, ISO-8601 UTC timestamps with second resolution, empty
//! cells for absent optionals and `;`-joined requested node lists.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};
use thiserror::Error;

use crate::trace::{JobRecord, OriginalState};

pub const HEADER: [&str; 20] = [
    "job_id",
    "name",
    "command",
    "account",
    "user_id",
    "dependency",
    "group_id",
    "requested_nodes",
    "num_tasks_per_socket",
    "partition",
    "time_limit",
    "qos",
    "num_cpu",
    "num_nodes",
    "num_gpus",
    "submit_time",
    "start_time",
    "end_time",
    "exit_code",
    "original_state",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: {message}")]
    Validation { line: u64, message: String },
}

impl TraceIoError {
    fn parse(line: u64, message: impl Into<String>) -> Self {
        TraceIoError::Parse {
            line,
            message: message.into(),
        }
    }
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .ok()
        .map(|n| n.and_utc())
}

/// Reads a trace file, preserving row order.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<JobRecord>, TraceIoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trace_from(file)
}

pub fn read_trace_from<R: Read>(reader: R) -> Result<Vec<JobRecord>, TraceIoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(row) => row.map_err(|e| csv_error(e, 1))?,
        None => return Err(TraceIoError::parse(1, "missing header row")),
    };
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(TraceIoError::parse(
            1,
            format!("header does not match the expected schema: {:?}", header),
        ));
    }

    let mut jobs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, row) in rows.enumerate() {
        let fallback_line = idx as u64 + 2;
        let row = row.map_err(|e| csv_error(e, fallback_line))?;
        let line = row.position().map_or(fallback_line, |p| p.line());
        let job = parse_row(&row, line)?;
        job.validate()
            .map_err(|message| TraceIoError::Validation { line, message })?;
        if !seen.insert(job.job_id) {
            return Err(TraceIoError::Validation {
                line,
                message: format!("duplicate job_id {}", job.job_id),
            });
        }
        jobs.push(job);
    }
    Ok(jobs)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> TraceIoError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    TraceIoError::parse(line, e.to_string())
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<JobRecord, TraceIoError> {
    if row.len() != HEADER.len() {
        return Err(TraceIoError::parse(
            line,
            format!("expected {} fields, found {}", HEADER.len(), row.len()),
        ));
    }
    let field = |i: usize| &row[i];
    let required = |i: usize| -> Result<u64, TraceIoError> {
        field(i)
            .parse::<u64>()
            .map_err(|_| TraceIoError::parse(line, format!("{}: invalid integer `{}`", HEADER[i], field(i))))
    };
    let required_u32 = |i: usize| -> Result<u32, TraceIoError> {
        field(i)
            .parse::<u32>()
            .map_err(|_| TraceIoError::parse(line, format!("{}: invalid integer `{}`", HEADER[i], field(i))))
    };
    let optional_u32 = |i: usize| -> Result<Option<u32>, TraceIoError> {
        if field(i).is_empty() {
            Ok(None)
        } else {
            required_u32(i).map(Some)
        }
    };
    let optional_time = |i: usize| -> Result<Option<DateTime<Utc>>, TraceIoError> {
        if field(i).is_empty() {
            return Ok(None);
        }
        parse_timestamp(field(i)).map(Some).ok_or_else(|| {
            TraceIoError::parse(line, format!("{}: invalid timestamp `{}`", HEADER[i], field(i)))
        })
    };

    let submit_time = optional_time(15)?
        .ok_or_else(|| TraceIoError::parse(line, "submit_time is required"))?;
    let requested_nodes = if field(7).is_empty() {
        Vec::new()
    } else {
        field(7).split(';').map(str::to_string).collect()
    };
    let original_state = if field(19).is_empty() {
        None
    } else {
        Some(
            field(19)
                .parse::<OriginalState>()
                .map_err(|e| TraceIoError::parse(line, e.to_string()))?,
        )
    };

    Ok(JobRecord {
        job_id: required(0)?,
        name: field(1).to_string(),
        command: field(2).to_string(),
        account: field(3).to_string(),
        user_id: required_u32(4)?,
        dependency: field(5).to_string(),
        group_id: required_u32(6)?,
        requested_nodes,
        num_tasks_per_socket: optional_u32(8)?,
        partition: field(9).to_string(),
        time_limit: optional_u32(10)?,
        qos: field(11).to_string(),
        num_cpu: required_u32(12)?,
        num_nodes: required_u32(13)?,
        num_gpus: required_u32(14)?,
        submit_time,
        start_time: optional_time(16)?,
        end_time: optional_time(17)?,
        exit_code: optional_u32(18)?,
        original_state,
    })
}

/// Writes a trace file. Output bytes depend only on `jobs`.
pub fn write_trace(jobs: &[JobRecord], path: impl AsRef<Path>) -> Result<(), TraceIoError> {
    let path = path.as_ref();
    let io_err = |source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_trace_to(jobs, file).map_err(io_err)
}

pub fn write_trace_to<W: Write>(jobs: &[JobRecord], writer: W) -> std::io::Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer);
    wtr.write_record(HEADER)?;
    for job in jobs {
        wtr.write_record(row_of(job))?;
    }
    wtr.flush()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn row_of(job: &JobRecord) -> [String; 20] {
    [
        job.job_id.to_string(),
        job.name.clone(),
        job.command.clone(),
        job.account.clone(),
        job.user_id.to_string(),
        job.dependency.clone(),
        job.group_id.to_string(),
        job.requested_nodes.join(";"),
        opt(job.num_tasks_per_socket),
        job.partition.clone(),
        opt(job.time_limit),
        job.qos.clone(),
        job.num_cpu.to_string(),
        job.num_nodes.to_string(),
        job.num_gpus.to_string(),
        format_timestamp(job.submit_time),
        opt(job.start_time.map(format_timestamp)),
        opt(job.end_time.map(format_timestamp)),
        opt(job.exit_code),
        opt(job.original_state.map(OriginalState::as_str)),
    ]
}
