//! HTTP client for an external sentence-embedding service.
//!
//! Protocol: `POST {base}/embed` with `{"texts": [...]}` answered by
//! `{"vectors": [[...384 reals], ...], "model": "...", "dim": 384}`, and
//! `GET {base}/health` answered by `{"status": "ok", "dim": 384}`. Any
//! non-200 status or malformed body surfaces as `EmbedderUnavailable`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Embedder, EncodingError, SB_DIM};

/// Texts per request; matches the service's default batch cap.
const MAX_BATCH: usize = 64;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
    pub model: String,
    pub dim: usize,
}

#[derive(Debug, Deserialize)]
pub struct Health {
    pub status: String,
    pub dim: usize,
}

pub struct HttpEmbedder {
    base_url: String,
    agent: ureq::Agent,
    name: String,
}

fn unavailable(e: impl std::fmt::Display) -> EncodingError {
    EncodingError::EmbedderUnavailable(e.to_string())
}

impl HttpEmbedder {
    /// Connects to `base_url` and checks `/health`.
    pub fn connect(base_url: &str) -> Result<Self, EncodingError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        let embedder = HttpEmbedder {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            name: format!("http:{base_url}"),
        };
        let health = embedder.health()?;
        if health.status != "ok" {
            return Err(unavailable(format!("health status `{}`", health.status)));
        }
        if health.dim != SB_DIM {
            return Err(EncodingError::Dimension {
                expected: SB_DIM,
                found: health.dim,
            });
        }
        Ok(embedder)
    }

    pub fn health(&self) -> Result<Health, EncodingError> {
        let mut resp = self
            .agent
            .get(format!("{}/health", self.base_url))
            .call()
            .map_err(unavailable)?;
        if resp.status() != 200 {
            return Err(unavailable(format!("/health returned {}", resp.status())));
        }
        resp.body_mut().read_json().map_err(unavailable)
    }

    fn post(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EncodingError> {
        let mut resp = self
            .agent
            .post(format!("{}/embed", self.base_url))
            .send_json(EmbedRequest { texts })
            .map_err(unavailable)?;
        if resp.status() != 200 {
            return Err(unavailable(format!("/embed returned {}", resp.status())));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_json()
            .map_err(unavailable)?;
        if body.vectors.len() != texts.len() {
            return Err(unavailable(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                body.vectors.len()
            )));
        }
        if body.dim != SB_DIM {
            return Err(EncodingError::Dimension {
                expected: SB_DIM,
                found: body.dim,
            });
        }
        if let Some(bad) = body.vectors.iter().find(|v| v.len() != SB_DIM) {
            return Err(EncodingError::Dimension {
                expected: SB_DIM,
                found: bad.len(),
            });
        }
        Ok(body.vectors)
    }
}

impl Embedder for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EncodingError> {
        Ok(self.post(&[text.to_string()])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EncodingError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(MAX_BATCH) {
            out.extend(self.post(chunk)?);
        }
        Ok(out)
    }
}
