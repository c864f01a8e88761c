use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::chunker::ChunkingStrategy;
use crate::embedder::EmbedderConfig;
use crate::evaluator::{ReportFormat, DEFAULT_K_VALUES};
use crate::qa_synth::GenConfig;
use crate::reranker::RerankerConfig;
use crate::vector_index::IndexKind;

pub const ENV_SEED: &str = "RETRIEVALBENCH_SEED";
pub const ENV_WORKERS: &str = "RETRIEVALBENCH_WORKERS";
pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_k_values() -> Vec<usize> {
    DEFAULT_K_VALUES.to_vec()
}
fn default_extensions() -> Vec<String> {
    crate::corpus::default_extensions()
}
fn default_redact() -> bool {
    true
}
fn default_formats() -> Vec<ReportFormat> {
    ReportFormat::ALL.to_vec()
}
fn default_embedder() -> EmbedderConfig {
    EmbedderConfig::HashProjection { dim: 256, seed: None }
}
fn default_index() -> IndexKind {
    IndexKind::hnsw_default()
}

/// One evaluation run, read from TOML. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    /// Global worker count; defaults to the number of CPUs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_extensions")]
    pub extensions: Vec<String>,
    #[serde(default = "default_redact")]
    pub redact: bool,
    /// Reviewer decisions applied to generated pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    #[serde(default)]
    pub chunking: ChunkingStrategy,
    #[serde(default = "default_embedder")]
    pub embedder: EmbedderConfig,
    #[serde(default = "default_index")]
    pub index: IndexKind,
    #[serde(default)]
    pub reranker: RerankerConfig,
    #[serde(default)]
    pub qa: GenConfig,
    /// Minimum Acc@k keyed by k ("3" or "acc@3").
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(corpus_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus_dir: corpus_dir.into(),
            output_dir: output_dir.into(),
            seed: DEFAULT_SEED,
            k_values: default_k_values(),
            workers: None,
            extensions: default_extensions(),
            redact: true,
            overrides: None,
            formats: default_formats(),
            chunking: ChunkingStrategy::default(),
            embedder: default_embedder(),
            index: default_index(),
            reranker: RerankerConfig::default(),
            qa: GenConfig::default(),
            thresholds: BTreeMap::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Apply `RETRIEVALBENCH_SEED` and `RETRIEVALBENCH_WORKERS` when set.
    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Some(v) = env_number(ENV_SEED)? {
            self.seed = v;
        }
        if let Some(v) = env_number(ENV_WORKERS)? {
            self.workers = Some(v as usize);
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    /// Thresholds with parsed keys.
    pub fn parsed_thresholds(&self) -> Result<BTreeMap<usize, f64>, HarnessError> {
        parse_thresholds(&self.thresholds)
    }

    /// Everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| HarnessError::Config(m);
        if !self.corpus_dir.is_dir() {
            return Err(cfg(format!("corpus_dir {} is not a directory", self.corpus_dir.display())));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(cfg("k_values must be non-empty positive integers".into()));
        }
        if self.workers == Some(0) {
            return Err(cfg("workers must be at least 1".into()));
        }
        if self.extensions.is_empty() {
            return Err(cfg("extensions must not be empty".into()));
        }
        if let Some(o) = &self.overrides {
            if !o.is_file() {
                return Err(cfg(format!("overrides file {} does not exist", o.display())));
            }
        }
        for (k, v) in self.parsed_thresholds()? {
            if !self.k_values.contains(&k) {
                return Err(cfg(format!("threshold for k={k} but k_values is {:?}", self.k_values)));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(cfg(format!("threshold for k={k} must be in [0, 1], got {v}")));
            }
        }
        self.chunking.validate().map_err(|e| cfg(e.to_string()))?;
        self.embedder.validate().map_err(|e| cfg(e.to_string()))?;
        self.index.validate().map_err(|e| cfg(e.to_string()))?;
        self.reranker.validate().map_err(|e| cfg(e.to_string()))?;
        self.qa.validate().map_err(|e| cfg(e.to_string()))?;
        Ok(())
    }
}

fn env_number(name: &str) -> Result<Option<u64>, HarnessError> {
    match std::env::var(name) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Config(format!("{name} must be a non-negative integer, got {v:?}"))),
        _ => Ok(None),
    }
}

pub fn parse_threshold_key(key: &str) -> Option<usize> {
    let trimmed = key.trim();
    let digits = trimmed
        .get(..4)
        .filter(|p| p.eq_ignore_ascii_case("acc@"))
        .map_or(trimmed, |_| &trimmed[4..]);
    digits.parse().ok().filter(|&k| k > 0)
}

pub fn parse_thresholds(raw: &BTreeMap<String, f64>) -> Result<BTreeMap<usize, f64>, HarnessError> {
    raw.iter()
        .map(|(key, &v)| {
            parse_threshold_key(key)
                .map(|k| (k, v))
                .ok_or_else(|| HarnessError::Config(format!("threshold key {key:?} is not a cutoff k")))
        })
        .collect()
}

/// A base config plus axes to sweep. Every combination of the listed axes
/// becomes one run; an empty axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub base: RunConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedder: Vec<EmbedderConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub index: Vec<IndexKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunking: Vec<ChunkingStrategy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reranker: Vec<RerankerConfig>,
}

impl MatrixConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Run configs in embedder, index, chunking, reranker nesting order, each
    /// writing to its own numbered subdirectory of the base output dir.
    pub fn expand(&self) -> Vec<RunConfig> {
        fn axis<T: Clone>(values: &[T], base: &T) -> Vec<T> {
            if values.is_empty() {
                vec![base.clone()]
            } else {
                values.to_vec()
            }
        }
        let b = &self.base;
        let mut runs = Vec::new();
        for e in axis(&self.embedder, &b.embedder) {
            for i in axis(&self.index, &b.index) {
                for c in axis(&self.chunking, &b.chunking) {
                    for r in axis(&self.reranker, &b.reranker) {
                        let mut run = b.clone();
                        run.output_dir = b.output_dir.join(format!("run-{:03}", runs.len()));
                        run.embedder = e.clone();
                        run.index = i;
                        run.chunking = c;
                        run.reranker = r.clone();
                        runs.push(run);
                    }
                }
            }
        }
        runs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reranker::RerankerKind;

    const FULL: &str = r#"
corpus_dir = "corpus"
output_dir = "out"
seed = 7
k_values = [3, 5, 10]
workers = 2
extensions = ["txt", "md"]
redact = false
formats = ["json", "md"]

[chunking]
type = "semantic"
similarity_threshold = 0.4
min_sentences = 3
max_chars = 1500

[embedder]
type = "remote"
endpoint = "http://localhost:8080/embed"
model_name = "bge-m3"
dim = 1024

[index]
type = "ivf"
nlist = 256
nprobe = 4

[reranker]
type = "remote"
endpoint = "http://localhost:8081/rerank"
model_name = "bge-reranker"
top_n = 20

[qa]
type = "remote_llm"
endpoint = "http://localhost:8082/v1/chat/completions"
model_name = "mixtral"

[thresholds]
"3" = 0.4
"acc@10" = 0.5
"#;

    #[test]
    fn parses_full_config() {
        let c = RunConfig::from_toml(FULL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.index, IndexKind::IvfFlat { nlist: 256, nprobe: 4 });
        assert_eq!(c.reranker.top_n, 20);
        assert!(matches!(c.reranker.kind, RerankerKind::RemoteCrossEncoder { .. }));
        assert_eq!(c.parsed_thresholds().unwrap(), BTreeMap::from([(3, 0.4), (10, 0.5)]));
        match &c.qa {
            GenConfig::RemoteLlm { temperature, prompt_template, .. } => {
                assert_eq!(*temperature, 0.2);
                assert!(prompt_template.contains("{chunk}"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let c = RunConfig::from_toml(FULL).unwrap();
        let emitted = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&emitted).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), emitted);

        let minimal = RunConfig::from_toml("corpus_dir = \"c\"\noutput_dir = \"o\"\n").unwrap();
        assert_eq!(minimal, RunConfig::new("c", "o"));
        assert_eq!(RunConfig::from_toml(&minimal.to_toml().unwrap()).unwrap(), minimal);
    }

    #[test]
    fn missing_corpus_dir_is_config_error() {
        let err = RunConfig::from_toml("output_dir = \"o\"\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config(ref m) if m.contains("corpus_dir")), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_toml("corpus_dir = \"c\"\noutput_dir = \"o\"\ncorpus = 1\n").is_err());
    }

    #[test]
    fn threshold_keys() {
        assert_eq!(parse_threshold_key("5"), Some(5));
        assert_eq!(parse_threshold_key("ACC@10"), Some(10));
        assert_eq!(parse_threshold_key("0"), None);
        assert_eq!(parse_threshold_key("ndcg@3"), None);
    }

    #[test]
    fn validate_catches_problems() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::new(dir.path(), dir.path().join("out"));
        c.validate().unwrap();
        c.thresholds.insert("7".into(), 0.5);
        assert!(c.validate().is_err());
        c.thresholds.clear();
        c.chunking = ChunkingStrategy::Recursive { max_chars: 10 };
        assert!(c.validate().is_err());
        let missing = RunConfig::new(dir.path().join("nope"), dir.path());
        assert!(matches!(missing.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn matrix_expansion() {
        let text = r#"
[base]
corpus_dir = "c"
output_dir = "o"

[[index]]
type = "flat"

[[index]]
type = "hnsw"

[[chunking]]
type = "recursive"
max_chars = 512

[[chunking]]
type = "recursive"
max_chars = 2000

[[chunking]]
type = "semantic"
"#;
        let m = MatrixConfig::from_toml(text).unwrap();
        let runs = m.expand();
        assert_eq!(runs.len(), 6);
        assert_eq!(runs[0].index, IndexKind::FlatExact);
        assert_eq!(runs[5].index, IndexKind::hnsw_default());
        assert_eq!(runs[5].chunking, ChunkingStrategy::semantic_default());
        assert_eq!(runs[4].output_dir, PathBuf::from("o").join("run-004"));
    }
}
