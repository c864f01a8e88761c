use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingVector, TextEmbedder};
use crate::http::{map_in_flight, JsonClient};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f32>,
}

/// Client for an HTTP embedding service speaking the
/// `{"model", "input"} -> {"data": [{"index", "embedding"}]}` convention.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: JsonClient,
    model_name: String,
    dim: usize,
    batch_size: usize,
    in_flight: usize,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: &str,
        model_name: &str,
        dim: usize,
        batch_size: usize,
        timeout_ms: u64,
        in_flight: usize,
    ) -> Result<Self, EmbedError> {
        let client = JsonClient::new(endpoint, timeout_ms).map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(Self::with_client(client, model_name, dim, batch_size, in_flight))
    }

    pub fn with_client(client: JsonClient, model_name: &str, dim: usize, batch_size: usize, in_flight: usize) -> Self {
        Self { client, model_name: model_name.to_string(), dim, batch_size: batch_size.max(1), in_flight: in_flight.max(1) }
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BatchFailure> {
        let resp: EmbedResponse = self
            .client
            .post(&EmbedRequest { model: &self.model_name, input: texts })
            .map_err(|e| BatchFailure::Transport(e.to_string()))?;
        let mut data = resp.data;
        data.sort_by_key(|d| d.index);
        let indices_ok = data.len() == texts.len() && data.iter().enumerate().all(|(i, d)| d.index == i);
        if !indices_ok {
            return Err(BatchFailure::Transport(format!(
                "expected {} embeddings indexed 0..{}, got {}",
                texts.len(),
                texts.len(),
                data.len()
            )));
        }
        data.into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(BatchFailure::Dimension(d.embedding.len()));
                }
                EmbeddingVector::normalized(d.embedding)
                    .map_err(|e| BatchFailure::Transport(format!("item {}: {e}", d.index)))
            })
            .collect()
    }
}

enum BatchFailure {
    Transport(String),
    Dimension(usize),
}

impl TextEmbedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results = map_in_flight(&batches, self.in_flight, |_, batch| self.embed_chunk(batch));

        let mut out = Vec::with_capacity(texts.len());
        let mut failed = Vec::new();
        let mut message = String::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(vs) => out.extend(vs),
                Err(BatchFailure::Dimension(actual)) => {
                    return Err(EmbedError::DimensionMismatch { expected: self.dim, actual });
                }
                Err(BatchFailure::Transport(m)) => {
                    failed.push(i);
                    if message.is_empty() {
                        message = m;
                    }
                }
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(EmbedError::Remote { failed_batches: failed, message })
        }
    }
}
