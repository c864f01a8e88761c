use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use retrievalbench_core::chunker::ChunkingStrategy;
use retrievalbench_core::evaluator::{render_csv, render_markdown, EvalReport, ReportFormat};
use retrievalbench_core::harness::{self, HarnessError, MatrixConfig, RunConfig, StageTimer, EXIT_ERROR, EXIT_OK};
use retrievalbench_core::reranker::RerankerKind;
use retrievalbench_core::vector_index::IndexKind;

#[derive(Parser)]
#[command(name = "retrievalbench", version, about = "Evaluate retrieval pipelines over a document corpus")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and normalize the corpus into documents.jsonl.
    Ingest(RunArgs),
    /// Chunk documents.jsonl into chunks.jsonl.
    Chunk(RunArgs),
    /// Generate and filter one question per chunk into pairs.jsonl.
    Genqa(RunArgs),
    /// Embed chunks into vectors.bin / vectors.ids.
    Embed(RunArgs),
    /// Build the vector index into index.rbi.
    Index(RunArgs),
    /// Evaluate pairs against the built index and write reports.
    Eval(RunArgs),
    /// Run every stage end to end.
    Run(RunArgs),
    /// Render one or more report.json files as a single table.
    Report(ReportArgs),
    /// Run the cross product of configurations listed in a matrix file.
    Matrix(MatrixArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum IndexArg {
    Flat,
    Hnsw,
    Ivf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChunkingArg {
    Recursive,
    Semantic,
}

#[derive(Clone, Copy, ValueEnum)]
enum RerankerArg {
    None,
    Remote,
    Lexical,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Md,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Md => ReportFormat::Md,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML). Without it, --corpus-dir and --output-dir are required.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    chunking: Option<ChunkingArg>,
    #[arg(long)]
    max_chars: Option<usize>,
    #[arg(long, value_enum)]
    index: Option<IndexArg>,
    /// HNSW neighbors per node.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    ef_construction: Option<usize>,
    /// HNSW ef at query time.
    #[arg(long)]
    ef: Option<usize>,
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long, value_enum)]
    reranker: Option<RerankerArg>,
    #[arg(long)]
    rerank_top_n: Option<usize>,
    #[arg(long)]
    reranker_endpoint: Option<String>,
    #[arg(long)]
    reranker_model: Option<String>,
    /// Reviewer keep/drop decisions (JSONL).
    #[arg(long)]
    overrides: Option<PathBuf>,
    /// Report formats to write; repeatable.
    #[arg(long = "format", value_enum)]
    formats: Vec<FormatArg>,
    /// Minimum Acc@k, as K=VALUE; repeatable.
    #[arg(long = "threshold", value_parser = parse_threshold)]
    thresholds: Vec<(String, f64)>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json files, one table row each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "md")]
    format: FormatArg,
    /// Write here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    /// Matrix configuration (TOML with a [base] table and axis arrays).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_threshold(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected K=VALUE, got {s:?}"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("bad threshold value in {s:?}"))?;
    Ok((k.trim().to_string(), v))
}

impl RunArgs {
    /// Config file, then environment, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => match (&self.corpus_dir, &self.output_dir) {
                (Some(c), Some(o)) => RunConfig::new(c, o),
                _ => return Err(HarnessError::Config("pass --config, or both --corpus-dir and --output-dir".into()).into()),
            },
        };
        cfg.apply_env()?;
        if let Some(v) = &self.corpus_dir {
            cfg.corpus_dir = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = Some(v);
        }
        if let Some(v) = &self.overrides {
            cfg.overrides = Some(v.clone());
        }
        if !self.formats.is_empty() {
            cfg.formats = self.formats.iter().map(|f| (*f).into()).collect();
        }
        for (k, v) in &self.thresholds {
            cfg.thresholds.insert(k.clone(), *v);
        }
        self.apply_chunking(&mut cfg);
        self.apply_index(&mut cfg)?;
        self.apply_reranker(&mut cfg)?;
        Ok(cfg)
    }

    fn apply_chunking(&self, cfg: &mut RunConfig) {
        match self.chunking {
            Some(ChunkingArg::Recursive) if !matches!(cfg.chunking, ChunkingStrategy::Recursive { .. }) => {
                cfg.chunking = ChunkingStrategy::default();
            }
            Some(ChunkingArg::Semantic) if !matches!(cfg.chunking, ChunkingStrategy::Semantic { .. }) => {
                cfg.chunking = ChunkingStrategy::semantic_default();
            }
            _ => {}
        }
        if let Some(n) = self.max_chars {
            match &mut cfg.chunking {
                ChunkingStrategy::Recursive { max_chars } | ChunkingStrategy::Semantic { max_chars, .. } => *max_chars = n,
            }
        }
    }

    fn apply_index(&self, cfg: &mut RunConfig) -> Result<()> {
        match self.index {
            Some(IndexArg::Flat) => cfg.index = IndexKind::FlatExact,
            Some(IndexArg::Hnsw) if !matches!(cfg.index, IndexKind::Hnsw { .. }) => cfg.index = IndexKind::hnsw_default(),
            Some(IndexArg::Ivf) if !matches!(cfg.index, IndexKind::IvfFlat { .. }) => cfg.index = IndexKind::ivf_default(),
            _ => {}
        }
        let hnsw_flags = self.m.is_some() || self.ef_construction.is_some() || self.ef.is_some();
        let ivf_flags = self.nlist.is_some() || self.nprobe.is_some();
        match &mut cfg.index {
            IndexKind::Hnsw { m, ef_construction, ef_search } => {
                if ivf_flags {
                    bail!(HarnessError::Config("--nlist/--nprobe apply only to --index ivf".into()));
                }
                *m = self.m.unwrap_or(*m);
                *ef_construction = self.ef_construction.unwrap_or(*ef_construction);
                *ef_search = self.ef.unwrap_or(*ef_search);
            }
            IndexKind::IvfFlat { nlist, nprobe } => {
                if hnsw_flags {
                    bail!(HarnessError::Config("--m/--ef-construction/--ef apply only to --index hnsw".into()));
                }
                *nlist = self.nlist.unwrap_or(*nlist);
                *nprobe = self.nprobe.unwrap_or(*nprobe);
            }
            IndexKind::FlatExact => {
                if hnsw_flags || ivf_flags {
                    bail!(HarnessError::Config("index parameters given for a flat index".into()));
                }
            }
        }
        Ok(())
    }

    fn apply_reranker(&self, cfg: &mut RunConfig) -> Result<()> {
        match self.reranker {
            Some(RerankerArg::None) => cfg.reranker.kind = RerankerKind::None,
            Some(RerankerArg::Lexical) => cfg.reranker.kind = RerankerKind::LexicalOverlap,
            Some(RerankerArg::Remote) => {
                let (endpoint, model_name, timeout_ms) = match &cfg.reranker.kind {
                    RerankerKind::RemoteCrossEncoder { endpoint, model_name, timeout_ms } => {
                        (Some(endpoint.clone()), Some(model_name.clone()), *timeout_ms)
                    }
                    _ => (None, None, 30_000),
                };
                let endpoint = self.reranker_endpoint.clone().or(endpoint);
                let model_name = self.reranker_model.clone().or(model_name);
                match (endpoint, model_name) {
                    (Some(endpoint), Some(model_name)) => {
                        cfg.reranker.kind = RerankerKind::RemoteCrossEncoder { endpoint, model_name, timeout_ms };
                    }
                    _ => bail!(HarnessError::Config("--reranker remote needs --reranker-endpoint and --reranker-model".into())),
                }
            }
            None => {
                if let RerankerKind::RemoteCrossEncoder { endpoint, model_name, .. } = &mut cfg.reranker.kind {
                    if let Some(e) = &self.reranker_endpoint {
                        *endpoint = e.clone();
                    }
                    if let Some(m) = &self.reranker_model {
                        *model_name = m.clone();
                    }
                } else if self.reranker_endpoint.is_some() || self.reranker_model.is_some() {
                    bail!(HarnessError::Config("--reranker-endpoint/--reranker-model need --reranker remote".into()));
                }
            }
        }
        if let Some(n) = self.rerank_top_n {
            cfg.reranker.top_n = n;
        }
        Ok(())
    }
}

fn prepare(args: &RunArgs) -> Result<Option<RunConfig>> {
    let cfg = args.resolve()?;
    if args.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(None);
    }
    cfg.validate()?;
    harness::init_workers(cfg.worker_count());
    Ok(Some(cfg))
}

/// Print the table and threshold results; map the outcome to an exit code.
fn finish(cfg: &RunConfig, report: &EvalReport) -> Result<i32> {
    print!("{}", render_markdown(std::slice::from_ref(report)));
    if report.n_excluded > 0 {
        println!("excluded queries: {} of {}", report.n_excluded, report.n_excluded + report.n_queries);
    }
    if report.failed {
        log::error!("more than 1% of queries were excluded; run marked failed");
        return Ok(EXIT_ERROR);
    }
    let check = harness::check_thresholds(report, &cfg.thresholds)?;
    for f in &check.failures {
        println!("threshold failed: Acc@{} = {:.3} < {:.3}", f.k, f.actual, f.required);
    }
    Ok(check.exit_code())
}

fn run_stage(command: &Command, args: &RunArgs) -> Result<i32> {
    let Some(cfg) = prepare(args)? else {
        return Ok(EXIT_OK);
    };
    let mut timer = StageTimer::default();
    let dir = cfg.output_dir.clone();
    match command {
        Command::Ingest(_) => {
            let docs = harness::stage_ingest(&cfg, &mut timer)?;
            println!("{} documents -> {}", docs.len(), dir.join(harness::DOCUMENTS_FILE).display());
        }
        Command::Chunk(_) => {
            let docs = harness::load_clean_documents(&dir)?;
            let embedder = harness::build_embedder(&cfg)?;
            let chunks = harness::stage_chunk(&cfg, &docs, embedder.as_ref(), &mut timer)?;
            println!("{} chunks -> {}", chunks.len(), dir.join(harness::CHUNKS_FILE).display());
        }
        Command::Genqa(_) => {
            let chunks = harness::load_chunks(&dir)?;
            let (_, s) = harness::stage_genqa(&cfg, &chunks, &mut timer)?;
            println!("{} generated, {} filtered, {} retained -> {}", s.generated, s.filtered, s.retained, dir.join(harness::PAIRS_FILE).display());
        }
        Command::Embed(_) => {
            let chunks = harness::load_chunks(&dir)?;
            let embedder = harness::build_embedder(&cfg)?;
            let vectors = harness::stage_embed(&cfg, &chunks, embedder.as_ref(), &mut timer)?;
            println!("{} vectors -> {}", vectors.len(), dir.join(harness::VECTORS_FILE).display());
        }
        Command::Index(_) => {
            let (ids, vectors) = harness::load_vectors(&dir)?;
            let index = harness::stage_index(&cfg, &ids, &vectors, &mut timer)?;
            println!("{} index over {} vectors -> {}", index.kind().label(), index.len(), dir.join(harness::INDEX_FILE).display());
        }
        Command::Eval(_) => {
            let chunks = harness::load_chunks(&dir)?;
            let pairs = harness::load_pairs(&dir)?;
            let index = harness::load_index(&dir)?;
            let embedder = harness::build_embedder(&cfg)?;
            let mut report = harness::stage_eval(&cfg, &chunks, &pairs, &index, embedder.as_ref(), &mut timer)?;
            report.timing.extend(timer.timings().iter().map(|(k, v)| (k.clone(), *v)));
            harness::stage_report(&cfg, &report, &mut timer)?;
            harness::write_manifest(&cfg, &timer)?;
            return finish(&cfg, &report);
        }
        Command::Run(_) => {
            let outcome = harness::run_pipeline(&cfg)?;
            return finish(&cfg, &outcome.report);
        }
        Command::Report(_) | Command::Matrix(_) => unreachable!("not a stage command"),
    }
    Ok(EXIT_OK)
}

fn report(args: &ReportArgs) -> Result<i32> {
    let mut reports = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        reports.push(EvalReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let body = match args.format {
        FormatArg::Md => render_markdown(&reports),
        FormatArg::Csv => render_csv(&reports),
        FormatArg::Json => {
            let value = if reports.len() == 1 { report_json(&reports[0])? } else { reports_json_array(&reports)? };
            value + "\n"
        }
    };
    write_or_print(args.output.as_deref(), &body)?;
    Ok(EXIT_OK)
}

fn report_json(report: &EvalReport) -> Result<String> {
    Ok(report.to_json()?.trim_end().to_string())
}

fn reports_json_array(reports: &[EvalReport]) -> Result<String> {
    let items: Result<Vec<String>> = reports.iter().map(report_json).collect();
    Ok(format!("[\n{}\n]", items?.join(",\n")))
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn matrix(args: &MatrixArgs) -> Result<i32> {
    let mut m = MatrixConfig::load(&args.config)?;
    m.base.apply_env()?;
    if let Some(v) = &args.output_dir {
        m.base.output_dir = v.clone();
    }
    if let Some(v) = args.seed {
        m.base.seed = v;
    }
    if let Some(v) = args.workers {
        m.base.workers = Some(v);
    }
    harness::init_workers(m.base.worker_count());
    let outcome = harness::run_matrix(&m)?;
    let reports: Vec<EvalReport> = outcome.runs.iter().map(|(_, o)| o.report.clone()).collect();
    print!("{}", render_markdown(&reports));
    let mut code = EXIT_OK;
    for (cfg, run) in &outcome.runs {
        if run.report.failed {
            log::error!("{}: more than 1% of queries excluded", cfg.output_dir.display());
            code = EXIT_ERROR;
            continue;
        }
        let check = harness::check_thresholds(&run.report, &cfg.thresholds)?;
        for f in &check.failures {
            println!("{}: threshold failed: Acc@{} = {:.3} < {:.3}", cfg.output_dir.display(), f.k, f.actual, f.required);
        }
        if code == EXIT_OK {
            code = check.exit_code();
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Report(args) => report(args),
        Command::Matrix(args) => matrix(args),
        Command::Ingest(a) | Command::Chunk(a) | Command::Genqa(a) | Command::Embed(a) | Command::Index(a) | Command::Eval(a) | Command::Run(a) => {
            run_stage(&cli.command, a)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
