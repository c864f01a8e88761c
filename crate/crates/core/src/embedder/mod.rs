//! Text embedding providers and vector utilities.
//!
//! Every vector handed to downstream code is unit-norm, so inner product and
//! cosine similarity coincide and the indexes never need to know the metric.

mod hash;
mod remote;
pub mod vectors_file;

use serde::{Deserialize, Serialize};

use crate::stopwords::is_stopword;

pub use hash::{hash_embed, HashProjection};
pub use remote::RemoteEmbedder;

pub const MIN_DIM: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid embedder configuration: {0}")]
    Config(String),
    #[error("vector is not finite or has zero norm")]
    Degenerate,
    #[error("remote embedding failed for batches {failed_batches:?}: {message}")]
    Remote { failed_batches: Vec<usize>, message: String },
}

/// Unit-norm embedding. The constructor normalizes; there is no way to build
/// an unnormalized one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbedError> {
        let wide: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        Self::from_f64(&wide)
    }

    pub(crate) fn from_f64(values: &[f64]) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Degenerate);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::Degenerate);
        }
        Ok(Self { values: values.iter().map(|v| (v / norm) as f32).collect() })
    }

    /// Wrap values that are already unit-norm, e.g. rows read back from disk.
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Remote {
        endpoint: String,
        model_name: String,
        dim: usize,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_in_flight")]
        in_flight: usize,
    },
    HashProjection {
        dim: usize,
        /// Falls back to the run's `embedder` sub-seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn default_batch_size() -> usize {
    32
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_in_flight() -> usize {
    crate::http::DEFAULT_IN_FLIGHT
}

impl EmbedderConfig {
    pub fn dim(&self) -> usize {
        match self {
            Self::Remote { dim, .. } | Self::HashProjection { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim() < MIN_DIM {
            return Err(EmbedError::Config(format!("dim must be at least {MIN_DIM}, got {}", self.dim())));
        }
        if let Self::Remote { batch_size, .. } = self {
            if *batch_size == 0 {
                return Err(EmbedError::Config("batch_size must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Short label for report tables.
    pub fn label(&self) -> String {
        match self {
            Self::Remote { model_name, dim, .. } => format!("{model_name} ({dim}-d)"),
            Self::HashProjection { dim, .. } => format!("hash-projection ({dim}-d)"),
        }
    }

    /// Construct the provider. `default_seed` applies to a seedless
    /// `HashProjection`.
    pub fn build(&self, default_seed: u64) -> Result<Box<dyn TextEmbedder>, EmbedError> {
        self.validate()?;
        Ok(match self {
            Self::HashProjection { dim, seed } => Box::new(HashProjection::new(*dim, seed.unwrap_or(default_seed))),
            Self::Remote { endpoint, model_name, dim, batch_size, timeout_ms, in_flight } => Box::new(
                RemoteEmbedder::new(endpoint, model_name, *dim, *batch_size, *timeout_ms, *in_flight)?,
            ),
        })
    }
}

/// A source of unit-norm embeddings.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per input, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop().ok_or(EmbedError::Remote { failed_batches: vec![0], message: "empty response".into() })
    }
}

pub fn embed_batch(config: &EmbedderConfig, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    config.build(0)?.embed_batch(texts)
}

/// Inner product with f64 accumulation. The indexes and every oracle score with
/// exactly this function so equal inputs give bitwise-equal scores.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc as f32
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f32, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

/// Lowercased alphanumeric word tokens, stopwords included.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The shared tokenizer: lowercased alphanumeric words with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    word_tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}
