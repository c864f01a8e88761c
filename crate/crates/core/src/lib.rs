//! Retrieval evaluation toolkit: corpus preparation, chunking, embedding,
//! vector search, reranking, synthetic question sets and ranking metrics.

pub mod chunker;
pub mod corpus;
pub mod embedder;
pub mod evaluator;
pub mod harness;
pub mod http;
pub mod jsonl;
pub mod qa_synth;
pub mod reranker;
pub mod seed;
pub mod stopwords;
pub mod vector_index;

pub use chunker::{chunk_document, Chunk, ChunkingStrategy};
pub use corpus::{CleanDocument, RawDocument};
pub use embedder::{EmbedderConfig, EmbeddingVector, HashProjection, TextEmbedder};
pub use evaluator::{EvalReport, PerQueryResult};
pub use harness::{RunConfig, RunManifest};
pub use qa_synth::{GenConfig, QueryChunkPair};
pub use reranker::{RerankerConfig, RerankerKind};
pub use vector_index::{build_index, BuiltIndex, IndexKind, SearchHit};
