//! Exact, HNSW and IVF-Flat vector indexes over unit-norm embeddings.
//!
//! All indexes score by inner product (higher is better). Result lists are
//! ordered by descending score with ties broken by ascending chunk id, and
//! every reported score is the exact inner product of the query with the
//! stored vector, whatever route found it.

mod hnsw;
mod ivf;
pub mod snapshot;

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedder::{dot, EmbeddingVector};

pub use hnsw::HnswGraph;
pub use ivf::{effective_nlist, IvfLists, KMEANS_MAX_ITERS, KMEANS_TOLERANCE};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("{vectors} vectors but {ids} ids")]
    LengthMismatch { vectors: usize, ids: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("ef_search ({ef}) must be at least k ({k})")]
    EfBelowK { ef: usize, k: usize },
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
    #[error("indexes were built over different corpora")]
    CorpusMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IndexKind {
    #[serde(rename = "flat")]
    FlatExact,
    Hnsw {
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_ef")]
        ef_construction: usize,
        #[serde(default = "default_ef")]
        ef_search: usize,
    },
    #[serde(rename = "ivf")]
    IvfFlat {
        #[serde(default = "default_nlist")]
        nlist: usize,
        #[serde(default = "default_nprobe")]
        nprobe: usize,
    },
}

fn default_m() -> usize {
    32
}
fn default_ef() -> usize {
    128
}
fn default_nlist() -> usize {
    1024
}
fn default_nprobe() -> usize {
    8
}

impl IndexKind {
    pub fn hnsw_default() -> Self {
        Self::Hnsw { m: default_m(), ef_construction: default_ef(), ef_search: default_ef() }
    }

    pub fn ivf_default() -> Self {
        Self::IvfFlat { nlist: default_nlist(), nprobe: default_nprobe() }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        match *self {
            Self::FlatExact => Ok(()),
            Self::Hnsw { m, ef_construction, ef_search } => {
                if m < 2 {
                    return Err(IndexError::InvalidParams(format!("HNSW m must be at least 2, got {m}")));
                }
                if ef_construction == 0 || ef_search == 0 {
                    return Err(IndexError::InvalidParams("ef values must be positive".into()));
                }
                Ok(())
            }
            Self::IvfFlat { nlist, nprobe } => {
                if nlist == 0 || nprobe == 0 {
                    return Err(IndexError::InvalidParams("nlist and nprobe must be positive".into()));
                }
                if nprobe > nlist {
                    return Err(IndexError::InvalidParams(format!("nprobe {nprobe} exceeds nlist {nlist}")));
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::FlatExact => "Flat",
            Self::Hnsw { .. } => "HNSW",
            Self::IvfFlat { .. } => "IVF-Flat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f32,
    /// 1-based.
    pub rank: usize,
}

/// Query-time overrides of the build parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchParams {
    pub ef_search: Option<usize>,
    pub nprobe: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum Structure {
    Flat,
    Hnsw(HnswGraph),
    Ivf(IvfLists),
}

#[derive(Debug, Clone)]
pub struct BuiltIndex {
    kind: IndexKind,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    structure: Structure,
}

/// Result ordering: descending score, then ascending chunk id.
pub fn hit_order(a_score: f32, a_id: &str, b_score: f32, b_id: &str) -> Ordering {
    b_score.partial_cmp(&a_score).unwrap_or(Ordering::Equal).then_with(|| a_id.cmp(b_id))
}

pub fn build_index(
    vectors: &[EmbeddingVector],
    ids: &[String],
    kind: IndexKind,
    seed: u64,
) -> Result<BuiltIndex, IndexError> {
    kind.validate()?;
    if vectors.len() != ids.len() {
        return Err(IndexError::LengthMismatch { vectors: vectors.len(), ids: ids.len() });
    }
    let dim = vectors.first().map_or(0, EmbeddingVector::dim);
    let mut seen = HashSet::with_capacity(ids.len());
    for (v, id) in vectors.iter().zip(ids) {
        if v.dim() != dim {
            return Err(IndexError::DimensionMismatch { expected: dim, actual: v.dim() });
        }
        if !seen.insert(id.as_str()) {
            return Err(IndexError::DuplicateId(id.clone()));
        }
    }
    let mut data = Vec::with_capacity(vectors.len() * dim);
    for v in vectors {
        data.extend_from_slice(v.values());
    }
    let structure = match kind {
        IndexKind::FlatExact => Structure::Flat,
        IndexKind::Hnsw { m, ef_construction, .. } => {
            Structure::Hnsw(HnswGraph::build(&data, dim, m, ef_construction, seed))
        }
        IndexKind::IvfFlat { nlist, .. } => Structure::Ivf(IvfLists::build(&data, dim, nlist, seed)),
    };
    Ok(BuiltIndex { kind, dim, ids: ids.to_vec(), data, structure })
}

impl BuiltIndex {
    pub(crate) fn from_parts(kind: IndexKind, dim: usize, ids: Vec<String>, data: Vec<f32>, structure: Structure) -> Self {
        Self { kind, dim, ids, data, structure }
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub(crate) fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn hnsw(&self) -> Option<&HnswGraph> {
        match &self.structure {
            Structure::Hnsw(g) => Some(g),
            _ => None,
        }
    }

    pub fn ivf(&self) -> Option<&IvfLists> {
        match &self.structure {
            Structure::Ivf(l) => Some(l),
            _ => None,
        }
    }

    pub fn effective_nlist(&self) -> Option<usize> {
        self.ivf().map(IvfLists::nlist)
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_with(query, k, SearchParams::default())
    }

    pub fn search_with(&self, query: &EmbeddingVector, k: usize, params: SearchParams) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim && !self.is_empty() {
            return Err(IndexError::DimensionMismatch { expected: self.dim, actual: query.dim() });
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let q = query.values();
        let rows: Vec<usize> = match (&self.structure, self.kind) {
            (Structure::Flat, _) => (0..self.len()).collect(),
            (Structure::Hnsw(g), IndexKind::Hnsw { ef_search, .. }) => {
                let ef = params.ef_search.unwrap_or(ef_search);
                if ef < k {
                    return Err(IndexError::EfBelowK { ef, k });
                }
                g.search(&self.data, self.dim, q, ef)
            }
            (Structure::Ivf(l), IndexKind::IvfFlat { nprobe, .. }) => {
                l.probe(self.dim, q, params.nprobe.unwrap_or(nprobe))
            }
            _ => unreachable!("structure always matches kind"),
        };
        Ok(self.top_k(q, rows, k))
    }

    fn top_k(&self, q: &[f32], rows: Vec<usize>, k: usize) -> Vec<SearchHit> {
        let mut scored: Vec<(f32, usize)> = rows.into_iter().map(|r| (dot(q, self.vector(r)), r)).collect();
        let cmp = |a: &(f32, usize), b: &(f32, usize)| hit_order(a.0, &self.ids[a.1], b.0, &self.ids[b.1]);
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, row))| SearchHit { chunk_id: self.ids[row].clone(), score, rank: i + 1 })
            .collect()
    }
}

/// Mean over queries of |approx top-k ∩ exact top-k| / min(k, count).
pub fn recall_vs_exact(
    index: &BuiltIndex,
    oracle: &BuiltIndex,
    queries: &[EmbeddingVector],
    k: usize,
) -> Result<f64, IndexError> {
    recall_vs_exact_with(index, oracle, queries, k, SearchParams::default())
}

pub fn recall_vs_exact_with(
    index: &BuiltIndex,
    oracle: &BuiltIndex,
    queries: &[EmbeddingVector],
    k: usize,
    params: SearchParams,
) -> Result<f64, IndexError> {
    if index.ids != oracle.ids || index.dim != oracle.dim || index.data != oracle.data {
        return Err(IndexError::CorpusMismatch);
    }
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if queries.is_empty() || index.is_empty() {
        return Ok(1.0);
    }
    let denom = k.min(index.len()) as f64;
    let mut total = 0.0;
    for q in queries {
        let exact: HashSet<String> = oracle.search(q, k)?.into_iter().map(|h| h.chunk_id).collect();
        let approx = index.search_with(q, k, params)?;
        total += approx.iter().filter(|h| exact.contains(&h.chunk_id)).count() as f64 / denom;
    }
    Ok(total / queries.len() as f64)
}
