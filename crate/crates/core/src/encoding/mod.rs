//! Feature encodings of a job.
//!
//! Two encodings are supported:
//!
//! * **INT** maps every non-numerical feature to a dictionary integer (fitted
//!   on training data, `0` for unseen or missing values) and passes numerical
//!   features through, giving a 15-dimensional vector.
//! * **SB** renders all feature values into one comma-separated string and
//!   hands it to a sentence [`Embedder`], giving a 384-dimensional vector.

mod external;
mod int;
mod sb;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{EmbedResponse, Health, HttpEmbedder};
pub use int::{encode_int, fit_int_encoder, CategoricalDictionary, CategoricalFeature};
pub(crate) use int::fit_int_encoder_iter;
pub use sb::{encode_sb, hash_embed, render_job_string, tokenize, HashEmbedder, JobString};

pub const INT_DIM: usize = 15;
pub const SB_DIM: usize = 384;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("cannot fit an encoder on an empty job list")]
    EmptyTraining,
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("expected a {expected}-dimensional vector, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("embedder `{0}` is not deterministic")]
    Nondeterministic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Encoding {
    #[serde(rename = "INT")]
    Int,
    #[serde(rename = "SB")]
    Sb,
    /// Caller-supplied vectors of arbitrary length.
    #[serde(rename = "RAW")]
    Raw,
}

impl Encoding {
    pub fn dim(self) -> Option<usize> {
        match self {
            Encoding::Int => Some(INT_DIM),
            Encoding::Sb => Some(SB_DIM),
            Encoding::Raw => None,
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Int => "INT",
            Encoding::Sb => "SB",
            Encoding::Raw => "RAW",
        })
    }
}

/// Fixed-length, finite numeric representation of a job.
///
/// The values live behind an `Arc`, so clones are cheap and reference sets
/// can be copied by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Arc<[f64]>,
    encoding: Encoding,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, encoding: Encoding) -> Result<Self, EncodingError> {
        if let Some(expected) = encoding.dim() {
            if values.len() != expected {
                return Err(EncodingError::Dimension {
                    expected,
                    found: values.len(),
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncodingError::NonFinite);
        }
        Ok(FeatureVector {
            values: values.into(),
            encoding,
        })
    }

    /// Untyped vector; panics on non-finite input.
    pub fn raw(values: impl Into<Vec<f64>>) -> Self {
        FeatureVector::new(values.into(), Encoding::Raw).expect("finite values")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// A sentence encoder producing 384-dimensional vectors.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    fn embed(&self, text: &str) -> Result<Vec<f64>, EncodingError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EncodingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EncodingError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EncodingError> {
        (**self).embed_batch(texts)
    }
}

const PROBE: &str = "job1, run_job1.sh, [1, 10], 2020-10-01 15:30:00";

/// Admits an embedder after checking it returns identical 384-dim vectors
/// for the same probe string twice.
pub fn register_embedder<E: Embedder>(embedder: E) -> Result<E, EncodingError> {
    let first = embedder.embed(PROBE)?;
    if first.len() != SB_DIM {
        return Err(EncodingError::Dimension {
            expected: SB_DIM,
            found: first.len(),
        });
    }
    let second = embedder.embed(PROBE)?;
    if first
        .iter()
        .zip(&second)
        .any(|(a, b)| a.to_bits() != b.to_bits())
        || second.len() != first.len()
    {
        return Err(EncodingError::Nondeterministic(embedder.name().to_string()));
    }
    Ok(embedder)
}
