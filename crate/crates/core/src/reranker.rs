//! Second-stage reranking of first-stage hits.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedder::tokenize;
use crate::http::JsonClient;
use crate::vector_index::{hit_order, SearchHit};

pub const DEFAULT_TOP_N: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("no text for chunk {0:?}")]
    MissingText(String),
    #[error("reranking query {query:?} failed: {message}")]
    Remote { query: String, message: String },
    #[error("invalid reranker configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RerankerKind {
    #[default]
    None,
    #[serde(rename = "remote")]
    RemoteCrossEncoder {
        endpoint: String,
        model_name: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
    #[serde(rename = "lexical")]
    LexicalOverlap,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

fn default_in_flight() -> usize {
    crate::http::DEFAULT_IN_FLIGHT
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankerConfig {
    #[serde(flatten)]
    pub kind: RerankerKind,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    /// Concurrent queries against a remote reranker.
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
}

impl Default for RerankerConfig {
    fn default() -> Self {
        Self { kind: RerankerKind::None, top_n: DEFAULT_TOP_N, in_flight: default_in_flight() }
    }
}

impl RerankerConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.top_n == 0 {
            return Err(RerankError::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match &self.kind {
            RerankerKind::None => "None".into(),
            RerankerKind::LexicalOverlap => "Lexical".into(),
            RerankerKind::RemoteCrossEncoder { model_name, .. } => model_name.clone(),
        }
    }
}

/// Fraction of the query's distinct content tokens that occur in the passage.
pub fn lexical_score(query: &str, passage: &str) -> f64 {
    let q: HashSet<String> = tokenize(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let p: HashSet<String> = tokenize(passage).into_iter().collect();
    q.intersection(&p).count() as f64 / q.len() as f64
}

#[derive(Serialize)]
struct CrossEncoderRequest<'a> {
    model: &'a str,
    query: &'a str,
    documents: &'a [&'a str],
}

#[derive(Deserialize)]
struct CrossEncoderResponse {
    scores: Vec<f64>,
}

/// A constructed reranker, ready to score.
#[derive(Debug, Clone)]
pub enum Reranker {
    None,
    Lexical,
    Remote { client: JsonClient, model_name: String },
}

impl Reranker {
    pub fn new(kind: &RerankerKind) -> Result<Self, RerankError> {
        Ok(match kind {
            RerankerKind::None => Self::None,
            RerankerKind::LexicalOverlap => Self::Lexical,
            RerankerKind::RemoteCrossEncoder { endpoint, model_name, timeout_ms } => Self::Remote {
                client: JsonClient::new(endpoint, *timeout_ms).map_err(|e| RerankError::Config(e.to_string()))?,
                model_name: model_name.clone(),
            },
        })
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::None)
    }

    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, RerankError> {
        match self {
            Self::None => Ok(vec![0.0; passages.len()]),
            Self::Lexical => Ok(passages.iter().map(|p| lexical_score(query, p)).collect()),
            Self::Remote { client, model_name } => {
                let fail = |message: String| RerankError::Remote { query: query.to_string(), message };
                let resp: CrossEncoderResponse = client
                    .post(&CrossEncoderRequest { model: model_name, query, documents: passages })
                    .map_err(|e| fail(e.to_string()))?;
                if resp.scores.len() != passages.len() {
                    return Err(fail(format!("{} scores for {} documents", resp.scores.len(), passages.len())));
                }
                if resp.scores.iter().any(|s| !s.is_finite()) {
                    return Err(fail("non-finite score".into()));
                }
                Ok(resp.scores)
            }
        }
    }
}

/// Rescore the first `top_n` hits and reorder them by descending reranker
/// score (ties by ascending chunk id). Hits past `top_n` follow in their
/// original order. Ranks are renumbered from 1.
pub fn rerank_top_n(
    reranker: &Reranker,
    query: &str,
    hits: &[SearchHit],
    texts: &HashMap<String, String>,
    top_n: usize,
) -> Result<Vec<SearchHit>, RerankError> {
    if reranker.is_identity() {
        return Ok(hits.to_vec());
    }
    if let Some(missing) = hits.iter().find(|h| !texts.contains_key(&h.chunk_id)) {
        return Err(RerankError::MissingText(missing.chunk_id.clone()));
    }
    let split = top_n.min(hits.len());
    let (head, tail) = hits.split_at(split);
    let passages: Vec<&str> = head.iter().map(|h| texts[&h.chunk_id].as_str()).collect();
    let scores = reranker.score(query, &passages)?;

    let mut rescored: Vec<SearchHit> = head
        .iter()
        .zip(&scores)
        .map(|(h, &s)| SearchHit { chunk_id: h.chunk_id.clone(), score: s as f32, rank: 0 })
        .collect();
    rescored.sort_by(|a, b| hit_order(a.score, &a.chunk_id, b.score, &b.chunk_id));
    rescored.extend(tail.iter().cloned());
    for (i, h) in rescored.iter_mut().enumerate() {
        h.rank = i + 1;
    }
    Ok(rescored)
}
