mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use config::{env_layer, file_layer, resolve_config, BackendKind, CliConfig, Layer};
use ras_core::dataset::{self, BuildOptions, LabelingModels};
use ras_core::embed::{Embedder, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use ras_core::encoder::EncoderParams;
use ras_core::engine::{Engine, InferenceMode, RetrieverKind, SessionTrace};
use ras_core::eval::{run_eval, Metric};
use ras_core::extract::{GatewayExtractor, Passage, SidecarTriples, TripleSource};
use ras_core::gateway::{
    LanguageModel, PromptTemplates, RemoteBackend, RemoteConfig, ScriptedBackend,
};
use ras_core::http::RetryPolicy;
use ras_core::retrieval::{
    build_dense_index, ingest_corpus, Bm25Retriever, CorpusStore, DenseIndex, DenseRetriever,
    Retriever,
};
use ras_core::triples::serialize_triples;

#[derive(Parser)]
#[command(
    name = "ras",
    version,
    about = "Iterative retrieval planning with question-specific knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a sharded dense index over a corpus.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Answer one question, or every question in a file.
    Ask(AskArgs),
    /// Score predictions against references.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Build planner and answerer training files, or summarize them.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Convert passages to triples.
    #[command(subcommand)]
    Triples(TriplesCmd),
    /// Make a single planner call.
    #[command(subcommand)]
    Plan(PlanCmd),
}

#[derive(Subcommand)]
enum IndexCmd {
    Build(IndexBuildArgs),
}

#[derive(Subcommand)]
enum EvalCmd {
    Run(EvalRunArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    Build(Box<DatasetBuildArgs>),
    Stats(DatasetStatsArgs),
}

#[derive(Subcommand)]
enum TriplesCmd {
    Extract(TriplesExtractArgs),
}

#[derive(Subcommand)]
enum PlanCmd {
    Step(PlanStepArgs),
}

/// Settings shared by every command that touches models or retrieval.
#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    index_dir: Option<PathBuf>,
    /// dense or bm25
    #[arg(long)]
    retriever: Option<String>,
    #[arg(long)]
    top_k: Option<String>,
    #[arg(long)]
    max_iterations: Option<String>,
    /// remote or scripted
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_new_tokens: Option<String>,
    #[arg(long)]
    token_budget: Option<String>,
    /// hash:<dim> or remote
    #[arg(long)]
    embedder: Option<String>,
    #[arg(long)]
    shards: Option<String>,
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    #[arg(long)]
    encoder_weights: Option<PathBuf>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    long_form: bool,
    #[arg(long)]
    task_instruction: Option<String>,
    /// answer or abort
    #[arg(long)]
    on_plan_failure: Option<String>,
    #[arg(long)]
    record_timings: bool,
}

impl Common {
    fn flag_layer(&self) -> Layer {
        let mut values = Map::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                values.insert(k.to_string(), Value::String(v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("corpus", path(&self.corpus));
        put("index_dir", path(&self.index_dir));
        put("templates_dir", path(&self.templates_dir));
        put("encoder_weights", path(&self.encoder_weights));
        put("retriever", self.retriever.clone());
        put("top_k", self.top_k.clone());
        put("max_iterations", self.max_iterations.clone());
        put("backend", self.backend.clone());
        put("endpoint", self.endpoint.clone());
        put("model", self.model.clone());
        put("max_new_tokens", self.max_new_tokens.clone());
        put("token_budget", self.token_budget.clone());
        put("embedder", self.embedder.clone());
        put("shards", self.shards.clone());
        put("workers", self.workers.clone());
        put("task_instruction", self.task_instruction.clone());
        put("on_plan_failure", self.on_plan_failure.clone());
        if self.long_form {
            values.insert("long_form".into(), Value::Bool(true));
        }
        if self.record_timings {
            values.insert("record_timings".into(), Value::Bool(true));
        }
        Layer {
            source: "command line".into(),
            values,
        }
    }

    fn resolve(&self) -> Result<CliConfig> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(file_layer(path)?);
        }
        layers.push(env_layer(|k| std::env::var(k).ok()));
        layers.push(self.flag_layer());
        resolve_config(&layers)
    }
}

#[derive(Args)]
struct IndexBuildArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AskArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "questions")]
    question: Option<String>,
    /// Line-delimited {id, question} records.
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Scripted replies, one per line.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Precomputed triples, one serialized list per corpus line.
    #[arg(long)]
    triples: Option<PathBuf>,
    /// Passages consumed by iteration 0 instead of retrieval.
    #[arg(long)]
    initial_context: Option<PathBuf>,
    /// Static mode: a JSON array of passage arrays, one per iteration.
    #[arg(long = "static-contexts")]
    static_contexts: Option<PathBuf>,
    /// Trace file; one record per question is appended.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Line-delimited {id, text} answers for `eval run`.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalRunArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    metric: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct DatasetBuildArgs {
    #[command(flatten)]
    common: Common,
    /// Line-delimited {question, docs: [{topic, text}], answer} records.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    planner_out: PathBuf,
    #[arg(long)]
    answer_out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Keep every supporting document instead of asking the generator.
    #[arg(long)]
    no_filter: bool,
    /// Scripted replies for the direct-answer model.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Scripted replies for document filtering and subquery generation.
    #[arg(long)]
    generator_script: Option<PathBuf>,
    /// Scripted replies for triple extraction.
    #[arg(long)]
    extract_script: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetStatsArgs {
    #[arg(long)]
    planner: PathBuf,
    #[arg(long)]
    answer: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TriplesExtractArgs {
    #[command(flatten)]
    common: Common,
    /// Line-delimited {id?, title?, text} passages.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args)]
struct PlanStepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    question: String,
    /// Trace file whose first record supplies the history.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    script: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index(IndexCmd::Build(a)) => index_build(a),
        Command::Ask(a) => ask(a),
        Command::Eval(EvalCmd::Run(a)) => eval_run(a),
        Command::Dataset(DatasetCmd::Build(a)) => dataset_build(*a),
        Command::Dataset(DatasetCmd::Stats(a)) => dataset_stats(a),
        Command::Triples(TriplesCmd::Extract(a)) => triples_extract(a),
        Command::Plan(PlanCmd::Step(a)) => plan_step(a),
    }
}

fn model(
    cfg: &CliConfig,
    script: Option<&Path>,
    name: Option<&str>,
) -> Result<Arc<dyn LanguageModel>> {
    match cfg.backend {
        BackendKind::Scripted => {
            let path = script.context("--backend scripted needs a script file")?;
            let b = ScriptedBackend::from_file(path)
                .with_context(|| format!("reading script {}", path.display()))?;
            Ok(Arc::new(b))
        }
        BackendKind::Remote => {
            let endpoint = cfg
                .endpoint
                .clone()
                .context("the remote backend needs an endpoint (--endpoint or RAS_ENDPOINT)")?;
            let model = name
                .map(str::to_string)
                .or_else(|| cfg.model.clone())
                .context("the remote backend needs a model name (--model or RAS_MODEL)")?;
            if cfg.max_new_tokens.is_none() {
                bail!("the remote backend needs --max-new-tokens");
            }
            Ok(Arc::new(RemoteBackend::new(RemoteConfig {
                endpoint,
                model,
                api_key: cfg.api_key.clone(),
                temperature: cfg.temperature,
                retry: RetryPolicy::default(),
            })))
        }
    }
}

fn embedder(cfg: &CliConfig) -> Result<Arc<dyn Embedder>> {
    if let Some(dim) = cfg.embedder.strip_prefix("hash:") {
        let dim: usize = dim
            .parse()
            .with_context(|| format!("bad embedder {:?}", cfg.embedder))?;
        if dim == 0 {
            bail!("hash embedder dimension must be positive");
        }
        return Ok(Arc::new(HashEmbedder::new(dim)));
    }
    if cfg.embedder == "remote" {
        return Ok(Arc::new(RemoteEmbedder::new(RemoteEmbedderConfig {
            endpoint: cfg
                .embed_endpoint
                .clone()
                .context("remote embedder needs embed_endpoint")?,
            dimension: cfg
                .embed_dimension
                .context("remote embedder needs embed_dimension")?,
            api_key: cfg.api_key.clone(),
            retry: RetryPolicy::default(),
        })));
    }
    bail!(
        "unknown embedder {:?}; expected hash:<dim> or remote",
        cfg.embedder
    )
}

fn templates(cfg: &CliConfig) -> Result<PromptTemplates> {
    match &cfg.templates_dir {
        Some(dir) => PromptTemplates::load_dir(dir)
            .with_context(|| format!("loading templates from {}", dir.display())),
        None => Ok(PromptTemplates::default()),
    }
}

fn load_corpus(cfg: &CliConfig) -> Result<Arc<CorpusStore>> {
    let path = cfg.corpus.as_ref().context("--corpus is required")?;
    let file = File::open(path).with_context(|| format!("opening corpus {}", path.display()))?;
    Ok(Arc::new(ingest_corpus(BufReader::new(file))?))
}

fn index_build(a: IndexBuildArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let store = load_corpus(&cfg)?;
    let dir = cfg.index_dir.as_ref().context("--index-dir is required")?;
    let embed = embedder(&cfg)?;
    let index = build_dense_index(&store, embed.as_ref(), cfg.shards.max(1))?;
    index.save(dir)?;
    println!(
        "indexed {} documents into {} shards (dim {}) at {}",
        store.len(),
        index.num_shards(),
        index.dimension(),
        dir.display()
    );
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

#[derive(Deserialize)]
struct QuestionRecord {
    #[serde(default)]
    id: Option<String>,
    question: String,
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn ask(a: AskArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let questions: Vec<QuestionRecord> = match (&a.question, &a.questions) {
        (Some(q), None) => vec![QuestionRecord {
            id: None,
            question: q.clone(),
        }],
        (None, Some(path)) => read_jsonl(path)?,
        _ => bail!("give exactly one of --question or --questions"),
    };
    let mut session = cfg.session();
    if a.static_contexts.is_some() {
        session.mode = InferenceMode::Static;
    }

    let llm = model(&cfg, a.script.as_deref(), None)?;
    let embed = embedder(&cfg)?;
    let tmpl = templates(&cfg)?;
    let encoder = match &cfg.encoder_weights {
        Some(p) => Some(
            EncoderParams::load(p).with_context(|| format!("loading encoder {}", p.display()))?,
        ),
        None => None,
    };

    let needs_retrieval = session.mode == InferenceMode::Dynamic;
    let retriever: Option<Box<dyn Retriever>> = if needs_retrieval && cfg.corpus.is_some() {
        let store = load_corpus(&cfg)?;
        Some(match cfg.retriever {
            RetrieverKind::Bm25 => Box::new(Bm25Retriever::new(store)),
            RetrieverKind::Dense => {
                let index = match &cfg.index_dir {
                    Some(dir) if dir.join("index.json").exists() => DenseIndex::load(dir)?,
                    _ => build_dense_index(&store, embed.as_ref(), cfg.shards.max(1))?,
                };
                Box::new(DenseRetriever::new(store, index, embed.clone()))
            }
        })
    } else {
        None
    };

    let extractor: Box<dyn TripleSource> = match &a.triples {
        Some(t) => {
            let corpus = cfg
                .corpus
                .as_ref()
                .context("--triples pairs lines with --corpus")?;
            Box::new(SidecarTriples::load(corpus, t)?)
        }
        None => Box::new(GatewayExtractor::new(
            llm.clone(),
            tmpl.clone(),
            cfg.max_new_tokens,
        )),
    };

    let mut engine =
        Engine::new(llm.as_ref(), extractor.as_ref(), embed.as_ref()).with_templates(tmpl);
    if let Some(r) = &retriever {
        engine = engine.with_retriever(r.as_ref());
    }
    if let Some(p) = &encoder {
        engine = engine.with_encoder(p);
    }

    let initial: Option<Vec<Passage>> = a.initial_context.as_deref().map(read_jsonl).transpose()?;
    let contexts: Option<Vec<Vec<Passage>>> = match &a.static_contexts {
        Some(p) => Some(
            serde_json::from_str(&fs::read_to_string(p)?)
                .with_context(|| format!("parsing {}", p.display()))?,
        ),
        None => None,
    };

    let snapshot = cfg.snapshot();
    let mut failures = 0;
    for (n, q) in questions.iter().enumerate() {
        let result = match (&contexts, &initial) {
            (Some(c), _) => engine.run_static(&q.question, c, &session)?,
            (None, Some(init)) => {
                engine.run_question_with_initial_context(&q.question, init, &session)?
            }
            (None, None) => engine.run_question(&q.question, &session)?,
        };
        let mut trace: SessionTrace = result.trace;
        trace.settings = Some(snapshot.clone());
        if trace.is_failed() {
            failures += 1;
            eprintln!(
                "failed: {}",
                trace.error.as_deref().unwrap_or("unknown error")
            );
        } else {
            println!("{}", trace.answer);
        }
        if let Some(out) = &a.out {
            append_line(out, &trace.to_json_line())?;
            if let Some(tok) = &result.graph_token {
                let mut tokens = out.as_os_str().to_owned();
                tokens.push(".tokens");
                append_line(Path::new(&tokens), &serde_json::to_string(&tok.vector)?)?;
            }
        }
        if let Some(pred) = &a.predictions_out {
            let id = q.id.clone().unwrap_or_else(|| n.to_string());
            append_line(pred, &json!({"id": id, "text": trace.answer}).to_string())?;
        }
    }
    if failures > 0 {
        bail!("{failures} of {} question(s) failed", questions.len());
    }
    Ok(())
}

fn eval_run(a: EvalRunArgs) -> Result<()> {
    let metric: Metric = a.metric.parse()?;
    let report = run_eval(&a.predictions, &a.references, metric, a.workers)?;
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!(
        "{}: {:.2} over {} example(s), {} failed",
        report.metric, report.aggregate, report.n, report.n_failed
    );
    Ok(())
}

fn dataset_build(a: DatasetBuildArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let entries = dataset::read_entries(&a.input)?;
    let scripted = cfg.backend == BackendKind::Scripted;
    let base = model(&cfg, a.script.as_deref(), None)?;
    let generator = model(
        &cfg,
        a.generator_script
            .as_deref()
            .or(a.script.as_deref().filter(|_| !scripted)),
        cfg.generator_model.as_deref(),
    )?;
    let extract_model = model(
        &cfg,
        a.extract_script
            .as_deref()
            .or(a.script.as_deref().filter(|_| !scripted)),
        cfg.extract_model.as_deref(),
    )?;
    let extractor = GatewayExtractor::new(extract_model, templates(&cfg)?, cfg.max_new_tokens);
    let models = LabelingModels {
        base: base.as_ref(),
        generator: generator.as_ref(),
        extractor: &extractor,
        max_new_tokens: cfg.max_new_tokens,
    };
    let out = dataset::build_dataset(
        &entries,
        models,
        BuildOptions {
            filter: !a.no_filter,
            workers: cfg.workers,
        },
    );
    dataset::write_jsonl(&a.planner_out, &out.planner)?;
    dataset::write_jsonl(&a.answer_out, &out.answer)?;
    if let Some(r) = &a.report {
        fs::write(r, serde_json::to_string_pretty(&out.report)? + "\n")?;
    }
    println!(
        "{} entries: {} labeled, {} dropped without documents, {} flagged, {} failed; {} planner and {} answer samples",
        out.report.entries,
        out.report.labeled,
        out.report.dropped_no_docs,
        out.report.flagged_for_review.len(),
        out.report.failed.len(),
        out.planner.len(),
        out.answer.len()
    );
    Ok(())
}

fn dataset_stats(a: DatasetStatsArgs) -> Result<()> {
    let stats = dataset::compute_stats(&a.planner, &a.answer)?;
    let text = serde_json::to_string_pretty(&stats)?;
    match &a.out {
        Some(out) => fs::write(out, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn triples_extract(a: TriplesExtractArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let llm = model(&cfg, a.script.as_deref(), cfg.extract_model.as_deref())?;
    let extractor = GatewayExtractor::new(llm, templates(&cfg)?, cfg.max_new_tokens);
    let passages: Vec<Passage> = read_jsonl(&a.input)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    let mut skipped = 0;
    for p in &passages {
        let (triples, diag) = extractor.extract(p)?;
        skipped += diag.skipped_spans;
        writeln!(w, "{}", serialize_triples(&triples)?)?;
    }
    w.flush()?;
    println!(
        "{} passage(s), {} malformed span(s) skipped",
        passages.len(),
        skipped
    );
    Ok(())
}

fn plan_step(a: PlanStepArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let llm = model(&cfg, a.script.as_deref(), None)?;
    let history = match &a.trace {
        Some(path) => {
            let traces: Vec<SessionTrace> = read_jsonl(path)?;
            traces
                .into_iter()
                .next()
                .map(|t| t.iterations)
                .unwrap_or_default()
        }
        None => Vec::new(),
    };
    let embed = HashEmbedder::new(1);
    let no_triples = SidecarTriples::default();
    let engine = Engine::new(llm.as_ref(), &no_triples, &embed).with_templates(templates(&cfg)?);
    let (raw, parsed) = engine.plan_step(&history, &a.question, &cfg.session())?;
    match parsed {
        Ok(plan) => println!("{plan}"),
        Err(e) => bail!("unparseable plan {raw:?}: {e}"),
    }
    Ok(())
}
