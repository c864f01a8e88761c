//! Splitting clean documents into retrieval chunks.
//!
//! Offsets and lengths are counted in Unicode scalar values (`char`s), not
//! bytes, and include whitespace.

mod recursive;
mod semantic;
mod validate;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::CleanDocument;
use crate::embedder::{EmbedError, TextEmbedder};

pub use recursive::recursive_chunk;
pub use semantic::{semantic_chunk, split_sentences};
pub use validate::{validate_chunks, ValidationReport, Violation, ViolationKind};

pub const MIN_MAX_CHARS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ChunkError {
    #[error("invalid chunking strategy: {0}")]
    InvalidStrategy(String),
    #[error("embedding failed in {doc_id} near sentence {sentence_index} ({sentence:?}): {source}")]
    Embedding {
        doc_id: String,
        sentence_index: usize,
        sentence: String,
        #[source]
        source: EmbedError,
    },
    #[error("semantic chunking requires an embedder")]
    MissingEmbedder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChunkingStrategy {
    Recursive {
        max_chars: usize,
    },
    Semantic {
        #[serde(default = "default_threshold")]
        similarity_threshold: f64,
        #[serde(default = "default_min_sentences")]
        min_sentences: usize,
        #[serde(default = "default_semantic_max")]
        max_chars: usize,
    },
}

fn default_threshold() -> f64 {
    0.5
}
fn default_min_sentences() -> usize {
    2
}
fn default_semantic_max() -> usize {
    2000
}

impl Default for ChunkingStrategy {
    fn default() -> Self {
        Self::Recursive { max_chars: 2000 }
    }
}

impl ChunkingStrategy {
    pub fn semantic_default() -> Self {
        Self::Semantic {
            similarity_threshold: default_threshold(),
            min_sentences: default_min_sentences(),
            max_chars: default_semantic_max(),
        }
    }

    pub fn max_chars(&self) -> usize {
        match self {
            Self::Recursive { max_chars } | Self::Semantic { max_chars, .. } => *max_chars,
        }
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.max_chars() < MIN_MAX_CHARS {
            return Err(ChunkError::InvalidStrategy(format!(
                "max_chars must be at least {MIN_MAX_CHARS}, got {}",
                self.max_chars()
            )));
        }
        if let Self::Semantic { similarity_threshold, min_sentences, .. } = self {
            if !(*similarity_threshold > 0.0 && *similarity_threshold < 1.0) {
                return Err(ChunkError::InvalidStrategy(format!(
                    "similarity_threshold must lie in (0, 1), got {similarity_threshold}"
                )));
            }
            if *min_sentences == 0 {
                return Err(ChunkError::InvalidStrategy("min_sentences must be positive".into()));
            }
        }
        Ok(())
    }

    /// Tag written to `chunks.jsonl` and used in report rows.
    pub fn label(&self) -> String {
        match self {
            Self::Recursive { max_chars } => format!("recursive-{max_chars}"),
            Self::Semantic { .. } => "semantic".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub span_start: usize,
    pub span_end: usize,
}

impl Chunk {
    pub fn span(&self) -> Range<usize> {
        self.span_start..self.span_end
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Row of `chunks.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    #[serde(flatten)]
    pub chunk: Chunk,
    pub strategy: String,
}

pub fn chunk_id(doc_id: &str, seq: usize) -> String {
    format!("{doc_id}:{seq:05}")
}

pub fn chunk_document(
    doc: &CleanDocument,
    strategy: &ChunkingStrategy,
    embedder: Option<&dyn TextEmbedder>,
) -> Result<Vec<Chunk>, ChunkError> {
    strategy.validate()?;
    match strategy {
        ChunkingStrategy::Recursive { max_chars } => Ok(recursive_chunk(doc, *max_chars)),
        ChunkingStrategy::Semantic { .. } => {
            semantic_chunk(doc, embedder.ok_or(ChunkError::MissingEmbedder)?, strategy)
        }
    }
}

/// Turn char ranges into numbered chunks, trimming boundary whitespace and
/// dropping ranges that are blank.
pub(crate) fn materialize(doc: &CleanDocument, chars: &[char], ranges: &[Range<usize>]) -> Vec<Chunk> {
    let mut chunks = Vec::with_capacity(ranges.len());
    for r in ranges {
        let Some(t) = trim_range(chars, r.clone()) else { continue };
        let seq = chunks.len();
        chunks.push(Chunk {
            chunk_id: chunk_id(&doc.doc_id, seq),
            doc_id: doc.doc_id.clone(),
            seq,
            text: chars[t.clone()].iter().collect(),
            span_start: t.start,
            span_end: t.end,
        });
    }
    chunks
}

pub(crate) fn trim_range(chars: &[char], r: Range<usize>) -> Option<Range<usize>> {
    let start = (r.start..r.end).find(|&i| !chars[i].is_whitespace())?;
    let end = (start..r.end).rev().find(|&i| !chars[i].is_whitespace())? + 1;
    Some(start..end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_validation() {
        assert!(ChunkingStrategy::Recursive { max_chars: 63 }.validate().is_err());
        assert!(ChunkingStrategy::Recursive { max_chars: 64 }.validate().is_ok());
        let bad = ChunkingStrategy::Semantic { similarity_threshold: 1.0, min_sentences: 2, max_chars: 2000 };
        assert!(bad.validate().is_err());
        assert!(ChunkingStrategy::semantic_default().validate().is_ok());
    }

    #[test]
    fn strategy_toml_defaults() {
        let s: ChunkingStrategy = toml::from_str("type = \"semantic\"").unwrap();
        assert_eq!(s, ChunkingStrategy::semantic_default());
        let r: ChunkingStrategy = toml::from_str("type = \"recursive\"\nmax_chars = 512").unwrap();
        assert_eq!(r, ChunkingStrategy::Recursive { max_chars: 512 });
    }

    #[test]
    fn record_keys() {
        let rec = ChunkRecord {
            chunk: Chunk {
                chunk_id: chunk_id("a.txt", 3),
                doc_id: "a.txt".into(),
                seq: 3,
                text: "hi".into(),
                span_start: 10,
                span_end: 12,
            },
            strategy: "recursive-512".into(),
        };
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["chunk_id", "doc_id", "seq", "span_end", "span_start", "strategy", "text"]);
        assert_eq!(v["chunk_id"], "a.txt:00003");
    }

    #[test]
    fn semantic_without_embedder_errors() {
        let doc = CleanDocument { doc_id: "d".into(), text: "A. B.".into(), redaction_count: 0 };
        assert!(matches!(
            chunk_document(&doc, &ChunkingStrategy::semantic_default(), None),
            Err(ChunkError::MissingEmbedder)
        ));
    }
}
