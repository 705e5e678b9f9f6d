use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;

use super::{Embedder, Encoding, EncodingError, FeatureVector, SB_DIM};
use crate::trace::JobRecord;

/// Comma-joined rendering of a job's fifteen feature values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JobString(String);

impl JobString {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for JobString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn or_zero(s: &str) -> &str {
    if s.is_empty() {
        "0"
    } else {
        s
    }
}

/// Renders feature values in feature-table order, `", "`-separated. Absent
/// values render as `0`; node lists as `[n1, n2]`.
pub fn render_job_string(job: &JobRecord) -> JobString {
    let opt = |v: Option<u32>| v.unwrap_or(0).to_string();
    let parts = [
        or_zero(&job.name).to_string(),
        or_zero(&job.command).to_string(),
        or_zero(&job.account).to_string(),
        job.user_id.to_string(),
        or_zero(&job.dependency).to_string(),
        job.group_id.to_string(),
        format!("[{}]", job.requested_nodes.join(", ")),
        opt(job.num_tasks_per_socket),
        or_zero(&job.partition).to_string(),
        opt(job.time_limit),
        or_zero(&job.qos).to_string(),
        job.num_cpu.to_string(),
        job.num_nodes.to_string(),
        job.num_gpus.to_string(),
        job.submit_time.format("%Y-%m-%d %H:%M:%S").to_string(),
    ];
    JobString(parts.join(", "))
}

pub fn encode_sb(job: &JobRecord, embedder: &dyn Embedder) -> Result<FeatureVector, EncodingError> {
    let values = embedder.embed(render_job_string(job).as_str())?;
    FeatureVector::new(values, Encoding::Sb)
}

/// Splits on commas, whitespace, `/`, `_` and `.`, dropping empty tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| c == ',' || c == '/' || c == '_' || c == '.' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

fn fnv(salt: u8, token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u8(salt);
    h.write(token.as_bytes());
    h.finish()
}

/// Signed feature hashing into 384 buckets, L2-normalised.
///
/// Each token lands in one bucket with a ±1 sign taken from an independent
/// hash, so texts that share tokens have positive cosine similarity while
/// token-disjoint texts are nearly orthogonal.
pub fn hash_embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; SB_DIM];
    for token in tokenize(text) {
        let bucket = (fnv(0, token) % SB_DIM as u64) as usize;
        let sign = if fnv(1, token) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Built-in deterministic embedder backed by [`hash_embed`].
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        "hash-384"
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EncodingError> {
        Ok(hash_embed(text))
    }
}
