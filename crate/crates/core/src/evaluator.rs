//! Top-K accuracy and NDCG@K over a closed-world query set, plus report
//! rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedder::{EmbedError, EmbeddingVector, TextEmbedder};
use crate::http::map_in_flight;
use crate::qa_synth::QueryChunkPair;
use crate::reranker::{rerank_top_n, RerankError, Reranker};
use crate::vector_index::{BuiltIndex, IndexError, SearchHit, SearchParams};

pub const DEFAULT_K_VALUES: [usize; 3] = [3, 5, 10];
/// A run with more than this fraction of excluded queries is marked failed.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no results to average")]
    EmptyResults,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no retained queries to evaluate")]
    EmptyDataset,
    #[error("every query was excluded ({0} failures)")]
    AllExcluded(usize),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error("report i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerQueryResult {
    pub query_id: String,
    pub gt_chunk_id: String,
    pub rank_of_truth: Option<usize>,
}

pub fn rank_of_truth(hits: &[SearchHit], gt_chunk_id: &str) -> Option<usize> {
    hits.iter().position(|h| h.chunk_id == gt_chunk_id).map(|i| i + 1)
}

fn check(results: &[PerQueryResult], k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    Ok(())
}

pub fn topk_accuracy(results: &[PerQueryResult], k: usize) -> Result<f64, EvalError> {
    check(results, k)?;
    let hits = results.iter().filter(|r| matches!(r.rank_of_truth, Some(rank) if rank <= k)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Per-query gain with a single relevant item: `1 / log2(rank + 1)` inside the
/// cutoff, zero otherwise. The ideal DCG is 1.
pub fn ndcg_gain(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r >= 1 && r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

pub fn ndcg_at_k(results: &[PerQueryResult], k: usize) -> Result<f64, EvalError> {
    check(results, k)?;
    let sum: f64 = results.iter().map(|r| ndcg_gain(r.rank_of_truth, k)).sum();
    Ok(sum / results.len() as f64)
}

/// Query embedding, first-stage search and optional reranking.
pub struct RetrievalPipeline<'a> {
    pub embedder: &'a dyn TextEmbedder,
    pub index: &'a BuiltIndex,
    pub reranker: &'a Reranker,
    pub top_n: usize,
    /// chunk_id to text, needed by any non-identity reranker.
    pub texts: &'a HashMap<String, String>,
    pub params: SearchParams,
    pub workers: usize,
}

enum QueryFailure {
    Provider(String),
    Fatal(EvalError),
}

impl RetrievalPipeline<'_> {
    /// Number of first-stage hits fetched per query.
    pub fn depth(&self, max_k: usize) -> usize {
        if self.reranker.is_identity() {
            max_k
        } else {
            max_k.max(self.top_n)
        }
    }

    fn run_query(&self, text: &str, vector: Option<&EmbeddingVector>, depth: usize) -> Result<Vec<SearchHit>, QueryFailure> {
        let owned;
        let vector = match vector {
            Some(v) => v,
            None => {
                owned = self.embedder.embed_one(text).map_err(|e| match e {
                    EmbedError::DimensionMismatch { .. } | EmbedError::Config(_) => QueryFailure::Fatal(e.into()),
                    other => QueryFailure::Provider(other.to_string()),
                })?;
                &owned
            }
        };
        let hits = self.index.search_with(vector, depth, self.params).map_err(|e| QueryFailure::Fatal(e.into()))?;
        rerank_top_n(self.reranker, text, &hits, self.texts, self.top_n).map_err(|e| match e {
            RerankError::Remote { .. } => QueryFailure::Provider(e.to_string()),
            other => QueryFailure::Fatal(other.into()),
        })
    }

    /// Ranked hits for one query string.
    pub fn retrieve(&self, query: &str, depth: usize) -> Result<Vec<SearchHit>, EvalError> {
        self.run_query(query, None, depth).map_err(|f| match f {
            QueryFailure::Fatal(e) => e,
            QueryFailure::Provider(m) => EvalError::Embed(EmbedError::Remote { failed_batches: vec![0], message: m }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLabels {
    pub model: String,
    pub index: String,
    pub chunking: String,
    pub reranker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: ReportLabels,
    pub k_values: Vec<usize>,
    pub acc_at_k: BTreeMap<usize, f64>,
    pub ndcg_at_k: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub n_excluded: usize,
    pub exclusions: Vec<Exclusion>,
    pub failed: bool,
    pub config_snapshot: serde_json::Value,
    /// Wall-clock seconds per stage. The only nondeterministic field.
    pub timing: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn from_results(results: &[PerQueryResult], k_values: &[usize]) -> Result<Self, EvalError> {
        let ks = normalize_k(k_values)?;
        let mut acc = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        for &k in &ks {
            acc.insert(k, topk_accuracy(results, k)?);
            ndcg.insert(k, ndcg_at_k(results, k)?);
        }
        Ok(Self {
            labels: ReportLabels::default(),
            k_values: ks,
            acc_at_k: acc,
            ndcg_at_k: ndcg,
            n_queries: results.len(),
            n_excluded: 0,
            exclusions: Vec::new(),
            failed: false,
            config_snapshot: serde_json::Value::Null,
            timing: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// JSON with the timing block emptied; stable across identical runs.
    pub fn canonical_json(&self) -> Result<String, EvalError> {
        let mut copy = self.clone();
        copy.timing.clear();
        copy.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }
}

fn normalize_k(k_values: &[usize]) -> Result<Vec<usize>, EvalError> {
    if k_values.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let set: BTreeSet<usize> = k_values.iter().copied().collect();
    if set.is_empty() {
        return Err(EvalError::ZeroK);
    }
    Ok(set.into_iter().collect())
}

pub struct EvalRun {
    pub report: EvalReport,
    pub results: Vec<PerQueryResult>,
}

/// Evaluate every retained pair. Provider failures exclude the query; index
/// errors abort the run.
pub fn evaluate_run(
    pipeline: &RetrievalPipeline<'_>,
    dataset: &[QueryChunkPair],
    k_values: &[usize],
) -> Result<EvalRun, EvalError> {
    let ks = normalize_k(k_values)?;
    let queries: Vec<&QueryChunkPair> = dataset.iter().filter(|p| !p.filtered).collect();
    if queries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let depth = pipeline.depth(*ks.last().expect("non-empty"));
    let start = Instant::now();

    // One batched call first; fall back to per-query embedding so a failing
    // request only costs the queries it carried.
    let texts: Vec<String> = queries.iter().map(|p| p.query_text.clone()).collect();
    let batch = match pipeline.embedder.embed_batch(&texts) {
        Ok(v) => Some(v),
        Err(e @ (EmbedError::DimensionMismatch { .. } | EmbedError::Config(_))) => return Err(e.into()),
        Err(e) => {
            log::warn!("batched query embedding failed, retrying per query: {e}");
            None
        }
    };
    let embed_secs = start.elapsed().as_secs_f64();

    let search_start = Instant::now();
    let outcomes = map_in_flight(&queries, pipeline.workers.max(1), |i, p| {
        pipeline.run_query(&p.query_text, batch.as_ref().map(|b| &b[i]), depth)
    });
    let search_secs = search_start.elapsed().as_secs_f64();

    let mut results = Vec::with_capacity(queries.len());
    let mut exclusions = Vec::new();
    for (p, outcome) in queries.iter().zip(outcomes) {
        match outcome {
            Ok(hits) => results.push(PerQueryResult {
                query_id: p.query_id.clone(),
                gt_chunk_id: p.chunk_id.clone(),
                rank_of_truth: rank_of_truth(&hits, &p.chunk_id),
            }),
            Err(QueryFailure::Fatal(e)) => return Err(e),
            Err(QueryFailure::Provider(reason)) => {
                exclusions.push(Exclusion { query_id: p.query_id.clone(), reason });
            }
        }
    }
    if results.is_empty() {
        return Err(EvalError::AllExcluded(exclusions.len()));
    }
    let mut report = EvalReport::from_results(&results, &ks)?;
    report.n_excluded = exclusions.len();
    report.failed = exclusions.len() as f64 > MAX_EXCLUDED_FRACTION * queries.len() as f64;
    report.exclusions = exclusions;
    report.timing.insert("embed_queries".into(), embed_secs);
    report.timing.insert("search".into(), search_secs);
    Ok(EvalRun { report, results })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Md,
    Csv,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [Self::Json, Self::Md, Self::Csv];

    pub fn extension(&self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Md => "md",
            Self::Csv => "csv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Some(Self::Json),
            "md" | "markdown" => Some(Self::Md),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

fn union_k(reports: &[EvalReport]) -> Vec<usize> {
    let set: BTreeSet<usize> = reports.iter().flat_map(|r| r.k_values.iter().copied()).collect();
    set.into_iter().collect()
}

fn cell(map: &BTreeMap<usize, f64>, k: usize) -> String {
    map.get(&k).map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn rows(reports: &[EvalReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let ks = union_k(reports);
    let mut header: Vec<String> = ["Model", "Index", "Chunking", "Reranker"].map(String::from).to_vec();
    for k in &ks {
        header.push(format!("Acc@{k}"));
        header.push(format!("NDCG@{k}"));
    }
    let body = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.labels.model.clone(), r.labels.index.clone(), r.labels.chunking.clone(), r.labels.reranker.clone()];
            for &k in &ks {
                row.push(cell(&r.acc_at_k, k));
                row.push(cell(&r.ndcg_at_k, k));
            }
            row
        })
        .collect();
    (header, body)
}

/// One markdown table with a row per report.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let (header, body) = rows(reports);
    let mut out = String::new();
    let esc = |s: &str| s.replace('|', "\\|");
    let _ = writeln!(out, "| {} |", header.iter().map(|h| esc(h)).collect::<Vec<_>>().join(" | "));
    let _ = writeln!(out, "|{}|", header.iter().map(|_| "---").collect::<Vec<_>>().join("|"));
    for row in body {
        let _ = writeln!(out, "| {} |", row.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
    }
    out
}

pub fn render_csv(reports: &[EvalReport]) -> String {
    let (header, body) = rows(reports);
    let quote = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    let mut out = String::new();
    for row in std::iter::once(header).chain(body) {
        out.push_str(&row.iter().map(|c| quote(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Write `report.<ext>` for each requested format. Returns the paths written.
pub fn emit_report(report: &EvalReport, formats: &[ReportFormat], output_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |path: &Path, source| EvalError::Io { path: path.to_path_buf(), source };
    fs::create_dir_all(output_dir).map_err(|e| io(output_dir, e))?;
    let wanted: BTreeSet<ReportFormat> = formats.iter().copied().collect();
    let mut paths = Vec::new();
    for format in wanted {
        let body = match format {
            ReportFormat::Json => report.to_json()?,
            ReportFormat::Md => render_markdown(std::slice::from_ref(report)),
            ReportFormat::Csv => render_csv(std::slice::from_ref(report)),
        };
        let path = output_dir.join(format!("report.{}", format.extension()));
        fs::write(&path, body).map_err(|e| io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
