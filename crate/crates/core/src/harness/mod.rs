//! End-to-end orchestration: stages, artifacts, manifests and CI gating.

mod config;
mod manifest;

pub use config::{
    parse_threshold_key, parse_thresholds, MatrixConfig, RunConfig, DEFAULT_SEED, ENV_SEED, ENV_WORKERS,
};
pub use manifest::{config_hash, digest_artifact, sha256_hex, verify_manifest, ArtifactDigest, RunManifest, MANIFEST_FILE};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::chunker::{chunk_document, validate_chunks, Chunk, ChunkRecord};
use crate::corpus::{load_documents, normalize_text, CleanDocument, FileError, RawDocument};
use crate::embedder::vectors_file::{read_vectors, write_vectors};
use crate::embedder::{EmbeddingVector, TextEmbedder};
use crate::evaluator::{emit_report, evaluate_run, render_csv, render_markdown, EvalReport, ReportLabels, RetrievalPipeline};
use crate::jsonl;
use crate::qa_synth::{apply_overrides, build_dataset, read_overrides, summarize, DatasetSummary, QueryChunkPair};
use crate::reranker::Reranker;
use crate::seed::sub_seed;
use crate::vector_index::snapshot::{read_snapshot, write_snapshot};
use crate::vector_index::{build_index, BuiltIndex, IndexKind, SearchParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_THRESHOLD: i32 = 2;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const INGEST_ERRORS_FILE: &str = "ingest_errors.jsonl";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const VECTOR_IDS_FILE: &str = "vectors.ids";
pub const INDEX_FILE: &str = "index.rbi";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Normalize,
    Chunk,
    GenerateQa,
    Embed,
    Index,
    Evaluate,
    Report,
    Manifest,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Normalize => "normalize",
            Self::Chunk => "chunk",
            Self::GenerateQa => "genqa",
            Self::Embed => "embed",
            Self::Index => "index",
            Self::Evaluate => "eval",
            Self::Report => "report",
            Self::Manifest => "manifest",
        }
    }

    pub fn fail(self, message: impl fmt::Display) -> HarnessError {
        HarnessError::Stage { stage: self, message: message.to_string() }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        EXIT_ERROR
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Self::Stage { stage, .. } => Some(*stage),
            Self::Config(_) => None,
        }
    }
}

/// Wall-clock seconds per stage, in execution order.
#[derive(Debug, Default, Clone)]
pub struct StageTimer {
    timings: BTreeMap<String, f64>,
}

impl StageTimer {
    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T, HarnessError>) -> Result<T, HarnessError> {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(stage.name().to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn timings(&self) -> &BTreeMap<String, f64> {
        &self.timings
    }
}

fn ensure_dir(dir: &Path, stage: Stage) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| stage.fail(format!("cannot create {}: {e}", dir.display())))
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T], stage: Stage) -> Result<(), HarnessError> {
    jsonl::write(path, rows).map_err(|e| stage.fail(e))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path, stage: Stage) -> Result<Vec<T>, HarnessError> {
    jsonl::read(path).map_err(|e| stage.fail(format!("{e} (run the earlier stages first?)")))
}

/// Size the global pool used for within-stage parallelism. Only the first
/// call in a process takes effect.
pub fn init_workers(workers: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global() {
        log::debug!("worker pool already initialised: {e}");
    }
}

pub fn build_embedder(cfg: &RunConfig) -> Result<Box<dyn TextEmbedder>, HarnessError> {
    cfg.embedder.build(sub_seed(cfg.seed, "embedder")).map_err(|e| HarnessError::Config(e.to_string()))
}

/// Load and normalize the corpus. Writes `documents.jsonl` and
/// `ingest_errors.jsonl`.
pub fn stage_ingest(cfg: &RunConfig, timer: &mut StageTimer) -> Result<Vec<CleanDocument>, HarnessError> {
    ensure_dir(&cfg.output_dir, Stage::Ingest)?;
    let (raw, errors): (Vec<RawDocument>, Vec<FileError>) = timer.time(Stage::Ingest, || {
        let outcome = load_documents(&cfg.corpus_dir, &cfg.extensions).map_err(|e| Stage::Ingest.fail(e))?;
        for e in &outcome.errors {
            log::warn!("skipped {}: {}", e.path, e.message);
        }
        Ok((outcome.documents, outcome.errors))
    })?;
    if raw.is_empty() {
        return Err(Stage::Ingest.fail(format!("no documents with extensions {:?} under {}", cfg.extensions, cfg.corpus_dir.display())));
    }
    let docs = timer.time(Stage::Normalize, || {
        let docs: Vec<CleanDocument> = raw.iter().map(|d| normalize_text(d, cfg.redact)).collect();
        write_rows(&cfg.output_dir.join(DOCUMENTS_FILE), &docs, Stage::Normalize)?;
        write_rows(&cfg.output_dir.join(INGEST_ERRORS_FILE), &errors, Stage::Normalize)?;
        Ok(docs)
    })?;
    log::info!("ingested {} documents ({} skipped)", docs.len(), errors.len());
    Ok(docs)
}

pub fn load_clean_documents(dir: &Path) -> Result<Vec<CleanDocument>, HarnessError> {
    read_rows(&dir.join(DOCUMENTS_FILE), Stage::Chunk)
}

/// Chunk every document and check the chunker's guarantees. Writes
/// `chunks.jsonl`.
pub fn stage_chunk(
    cfg: &RunConfig,
    docs: &[CleanDocument],
    embedder: &dyn TextEmbedder,
    timer: &mut StageTimer,
) -> Result<Vec<Chunk>, HarnessError> {
    timer.time(Stage::Chunk, || {
        let label = cfg.chunking.label();
        let mut chunks = Vec::new();
        for doc in docs {
            let doc_chunks = chunk_document(doc, &cfg.chunking, Some(embedder)).map_err(|e| Stage::Chunk.fail(e))?;
            let report = validate_chunks(&doc_chunks, doc, cfg.chunking.max_chars());
            if let Some(v) = report.first_violation {
                return Err(Stage::Chunk.fail(format!("{}: {} {}", doc.doc_id, v.kind.as_str(), v.detail)));
            }
            chunks.extend(doc_chunks);
        }
        if chunks.is_empty() {
            return Err(Stage::Chunk.fail("corpus produced no chunks"));
        }
        let records: Vec<ChunkRecord> =
            chunks.iter().map(|c| ChunkRecord { chunk: c.clone(), strategy: label.clone() }).collect();
        write_rows(&cfg.output_dir.join(CHUNKS_FILE), &records, Stage::Chunk)?;
        log::info!("{} chunks ({label})", chunks.len());
        Ok(chunks)
    })
}

pub fn load_chunks(dir: &Path) -> Result<Vec<Chunk>, HarnessError> {
    let records: Vec<ChunkRecord> = read_rows(&dir.join(CHUNKS_FILE), Stage::Chunk)?;
    Ok(records.into_iter().map(|r| r.chunk).collect())
}

/// Generate, filter and review the question set. Writes `pairs.jsonl`.
pub fn stage_genqa(
    cfg: &RunConfig,
    chunks: &[Chunk],
    timer: &mut StageTimer,
) -> Result<(Vec<QueryChunkPair>, DatasetSummary), HarnessError> {
    timer.time(Stage::GenerateQa, || {
        let mut dataset = build_dataset(&cfg.qa, chunks).map_err(|e| Stage::GenerateQa.fail(e))?;
        if let Some(path) = &cfg.overrides {
            let overrides = read_overrides(path).map_err(|e| Stage::GenerateQa.fail(e))?;
            let changed = apply_overrides(&mut dataset.pairs, &overrides).map_err(|e| Stage::GenerateQa.fail(e))?;
            log::info!("{changed} pairs changed by reviewer overrides");
            dataset.summary = summarize(&dataset.pairs);
        }
        write_rows(&cfg.output_dir.join(PAIRS_FILE), &dataset.pairs, Stage::GenerateQa)?;
        let s = dataset.summary;
        log::info!("questions: {} generated, {} filtered, {} retained", s.generated, s.filtered, s.retained);
        Ok((dataset.pairs, s))
    })
}

pub fn load_pairs(dir: &Path) -> Result<Vec<QueryChunkPair>, HarnessError> {
    read_rows(&dir.join(PAIRS_FILE), Stage::GenerateQa)
}

/// Embed every chunk. Writes `vectors.bin` and `vectors.ids`.
pub fn stage_embed(
    cfg: &RunConfig,
    chunks: &[Chunk],
    embedder: &dyn TextEmbedder,
    timer: &mut StageTimer,
) -> Result<Vec<EmbeddingVector>, HarnessError> {
    timer.time(Stage::Embed, || {
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_batch(&texts).map_err(|e| Stage::Embed.fail(e))?;
        let ids: Vec<String> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        write_vectors(&cfg.output_dir.join(VECTORS_FILE), &cfg.output_dir.join(VECTOR_IDS_FILE), &ids, &vectors)
            .map_err(|e| Stage::Embed.fail(e))?;
        Ok(vectors)
    })
}

pub fn load_vectors(dir: &Path) -> Result<(Vec<String>, Vec<EmbeddingVector>), HarnessError> {
    read_vectors(&dir.join(VECTORS_FILE), &dir.join(VECTOR_IDS_FILE)).map_err(|e| Stage::Index.fail(e))
}

pub fn index_seed(seed: u64, kind: &IndexKind) -> u64 {
    match kind {
        IndexKind::FlatExact => 0,
        IndexKind::Hnsw { .. } => sub_seed(seed, "hnsw"),
        IndexKind::IvfFlat { .. } => sub_seed(seed, "kmeans"),
    }
}

/// Build the configured index. Writes `index.rbi`.
pub fn stage_index(
    cfg: &RunConfig,
    ids: &[String],
    vectors: &[EmbeddingVector],
    timer: &mut StageTimer,
) -> Result<BuiltIndex, HarnessError> {
    timer.time(Stage::Index, || {
        let index = build_index(vectors, ids, cfg.index, index_seed(cfg.seed, &cfg.index)).map_err(|e| Stage::Index.fail(e))?;
        write_snapshot(&cfg.output_dir.join(INDEX_FILE), &index).map_err(|e| Stage::Index.fail(e))?;
        if let Some(n) = index.effective_nlist() {
            log::info!("IVF effective nlist {n}");
        }
        Ok(index)
    })
}

pub fn load_index(dir: &Path) -> Result<BuiltIndex, HarnessError> {
    read_snapshot(&dir.join(INDEX_FILE)).map_err(|e| Stage::Evaluate.fail(e))
}

pub fn labels(cfg: &RunConfig) -> ReportLabels {
    let index = match cfg.index {
        IndexKind::FlatExact => "Flat".to_string(),
        IndexKind::Hnsw { m, ef_construction, ef_search } => format!("HNSW (M={m}, efC={ef_construction}, ef={ef_search})"),
        IndexKind::IvfFlat { nlist, nprobe } => format!("IVF-Flat (nlist={nlist}, nprobe={nprobe})"),
    };
    ReportLabels { model: cfg.embedder.label(), index, chunking: cfg.chunking.label(), reranker: cfg.reranker.label() }
}

/// Embed the retained questions, search, rerank and score.
pub fn stage_eval(
    cfg: &RunConfig,
    chunks: &[Chunk],
    pairs: &[QueryChunkPair],
    index: &BuiltIndex,
    embedder: &dyn TextEmbedder,
    timer: &mut StageTimer,
) -> Result<EvalReport, HarnessError> {
    timer.time(Stage::Evaluate, || {
        let known: HashSet<&str> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        if let Some(p) = pairs.iter().find(|p| !known.contains(p.chunk_id.as_str())) {
            return Err(Stage::Evaluate.fail(format!("pair {} references unknown chunk {}", p.query_id, p.chunk_id)));
        }
        let texts: HashMap<String, String> = chunks.iter().map(|c| (c.chunk_id.clone(), c.text.clone())).collect();
        let reranker = Reranker::new(&cfg.reranker.kind).map_err(|e| HarnessError::Config(e.to_string()))?;
        let pipeline = RetrievalPipeline {
            embedder,
            index,
            reranker: &reranker,
            top_n: cfg.reranker.top_n,
            texts: &texts,
            params: SearchParams::default(),
            workers: if reranker.is_identity() { cfg.worker_count() } else { cfg.reranker.in_flight.max(1) },
        };
        let run = evaluate_run(&pipeline, pairs, &cfg.k_values).map_err(|e| Stage::Evaluate.fail(e))?;
        let mut report = run.report;
        report.labels = labels(cfg);
        report.config_snapshot = serde_json::to_value(cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
        for (k, v) in std::mem::take(&mut report.timing) {
            report.timing.insert(format!("eval.{k}"), v);
        }
        if report.n_excluded > 0 {
            log::warn!("{} queries excluded", report.n_excluded);
        }
        Ok(report)
    })
}

/// Write the report files.
pub fn stage_report(cfg: &RunConfig, report: &EvalReport, timer: &mut StageTimer) -> Result<Vec<PathBuf>, HarnessError> {
    timer.time(Stage::Report, || emit_report(report, &cfg.formats, &cfg.output_dir).map_err(|e| Stage::Report.fail(e)))
}

/// Digest every artifact present in the output directory and write
/// `manifest.json`.
pub fn write_manifest(cfg: &RunConfig, timer: &StageTimer) -> Result<RunManifest, HarnessError> {
    let names = [
        DOCUMENTS_FILE,
        INGEST_ERRORS_FILE,
        CHUNKS_FILE,
        PAIRS_FILE,
        VECTORS_FILE,
        VECTOR_IDS_FILE,
        INDEX_FILE,
        "report.json",
        "report.md",
        "report.csv",
    ];
    let mut artifacts = Vec::new();
    for name in names {
        if cfg.output_dir.join(name).is_file() {
            artifacts.push(digest_artifact(&cfg.output_dir, name)?);
        }
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        artifacts,
        stage_timings: timer.timings().clone(),
    };
    manifest.write(&cfg.output_dir)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub manifest: RunManifest,
    pub dataset: DatasetSummary,
}

/// Every stage from corpus to manifest. Artifacts written before a failure
/// stay on disk.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let mut timer = StageTimer::default();
    let embedder = build_embedder(cfg)?;
    let docs = stage_ingest(cfg, &mut timer)?;
    let chunks = stage_chunk(cfg, &docs, embedder.as_ref(), &mut timer)?;
    let (pairs, dataset) = stage_genqa(cfg, &chunks, &mut timer)?;
    let vectors = stage_embed(cfg, &chunks, embedder.as_ref(), &mut timer)?;
    let ids: Vec<String> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
    let index = stage_index(cfg, &ids, &vectors, &mut timer)?;
    let mut report = stage_eval(cfg, &chunks, &pairs, &index, embedder.as_ref(), &mut timer)?;
    for (k, v) in timer.timings() {
        report.timing.insert(k.clone(), *v);
    }
    stage_report(cfg, &report, &mut timer)?;
    let manifest = write_manifest(cfg, &timer)?;
    Ok(RunOutcome { report, manifest, dataset })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFailure {
    pub k: usize,
    pub required: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdCheck {
    pub failures: Vec<ThresholdFailure>,
}

impl ThresholdCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_THRESHOLD
        }
    }
}

/// Pass iff Acc@k meets every threshold. A threshold for a k the report
/// does not contain is a configuration error.
pub fn check_thresholds(report: &EvalReport, thresholds: &BTreeMap<String, f64>) -> Result<ThresholdCheck, HarnessError> {
    let mut failures = Vec::new();
    for (k, required) in parse_thresholds(thresholds)? {
        let actual = *report
            .acc_at_k
            .get(&k)
            .ok_or_else(|| HarnessError::Config(format!("threshold for k={k} but the report has k {:?}", report.k_values)))?;
        if actual < required {
            failures.push(ThresholdFailure { k, required, actual });
        }
    }
    Ok(ThresholdCheck { failures })
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub runs: Vec<(RunConfig, RunOutcome)>,
    pub table_paths: Vec<PathBuf>,
}

/// Run every combination and write `matrix.md` and `matrix.csv` to the base
/// output directory.
pub fn run_matrix(matrix: &MatrixConfig) -> Result<MatrixOutcome, HarnessError> {
    let configs = matrix.expand();
    for c in &configs {
        c.validate()?;
    }
    let mut runs = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.into_iter().enumerate() {
        log::info!("matrix run {}: {} / {} / {} / {}", i, cfg.embedder.label(), cfg.index.label(), cfg.chunking.label(), cfg.reranker.label());
        let outcome = run_pipeline(&cfg)?;
        runs.push((cfg, outcome));
    }
    let reports: Vec<EvalReport> = runs.iter().map(|(_, o)| o.report.clone()).collect();
    let dir = &matrix.base.output_dir;
    ensure_dir(dir, Stage::Report)?;
    let md = dir.join("matrix.md");
    let csv = dir.join("matrix.csv");
    std::fs::write(&md, render_markdown(&reports)).map_err(|e| Stage::Report.fail(e))?;
    std::fs::write(&csv, render_csv(&reports)).map_err(|e| Stage::Report.fail(e))?;
    Ok(MatrixOutcome { runs, table_paths: vec![md, csv] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::PerQueryResult;

    fn report(acc3: f64) -> EvalReport {
        let mut r = EvalReport::from_results(
            &[PerQueryResult { query_id: "q".into(), gt_chunk_id: "c".into(), rank_of_truth: Some(1) }],
            &[3, 5, 10],
        )
        .unwrap();
        r.acc_at_k.insert(3, acc3);
        r
    }

    #[test]
    fn thresholds() {
        let empty = BTreeMap::new();
        assert!(check_thresholds(&report(0.5), &empty).unwrap().passed());
        let t = BTreeMap::from([("3".to_string(), 0.4)]);
        assert_eq!(check_thresholds(&report(0.5), &t).unwrap().exit_code(), EXIT_OK);
        let t = BTreeMap::from([("3".to_string(), 0.6)]);
        let check = check_thresholds(&report(0.5), &t).unwrap();
        assert_eq!(check.exit_code(), EXIT_THRESHOLD);
        assert_eq!(check.failures, vec![ThresholdFailure { k: 3, required: 0.6, actual: 0.5 }]);
        let t = BTreeMap::from([("4".to_string(), 0.1)]);
        assert!(matches!(check_thresholds(&report(0.5), &t), Err(HarnessError::Config(_))));
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let e = Stage::Embed.fail("boom");
        assert_eq!(e.to_string(), "stage embed failed: boom");
        assert_eq!(e.stage(), Some(Stage::Embed));
        assert_eq!(e.exit_code(), EXIT_ERROR);
    }
}
