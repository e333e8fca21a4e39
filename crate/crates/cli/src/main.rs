mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trial_digest::exec::Execution;
use trial_digest::ingest::{load_corpus, save_corpus, Query, RegistryClient};
use trial_digest::llm_backend::{Backend, HttpBackend, MockBackend};
use trial_digest::metrics::{self, ReportOptions, SummaryInput, TTestVariant};
use trial_digest::pipeline::{Pipeline, ResponseCache, RunRecord};
use trial_digest::prompting::PromptTemplates;
use trial_digest::trial_model::{classify_recency, exclusion_reason, Corpus, MedicalField, RecencyClass};

use config::{BackendKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "trial-digest",
    version,
    about = "Summarize clinical-trial registry records into one referenced paragraph"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download trials from the registry, filter them and write a corpus file.
    Fetch(FetchArgs),
    /// Run the summarization cascade over a corpus file.
    Summarize(SummarizeArgs),
    /// Evaluate summaries (readability, citations, lengths) or score ROUGE-L.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct FetchArgs {
    /// Registry search expression, e.g. a device name.
    #[arg(long)]
    query: String,
    #[arg(long)]
    out: PathBuf,
    /// Device label stored in the corpus; defaults to the query.
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    field: Option<MedicalField>,
    /// Keep only trials in this recency class.
    #[arg(long)]
    recency: Option<RecencyClass>,
    /// Date the recency windows are measured back from (default: today).
    #[arg(long)]
    reference_date: Option<NaiveDate>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    page_size: Option<u32>,
    #[arg(long)]
    max_records: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Summary document (paragraph plus reference list).
    #[arg(long)]
    out: PathBuf,
    /// Run record JSON; defaults to the summary path with a .json extension.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    token_limit: Option<usize>,
    #[arg(long)]
    reduce_fan_in: Option<usize>,
    #[arg(long)]
    max_cascade_depth: Option<usize>,
    #[arg(long)]
    audience: Option<String>,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the http backend's API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    map_template: Option<PathBuf>,
    #[arg(long)]
    reduce_template: Option<PathBuf>,
    /// Run the map stage on one thread.
    #[arg(long)]
    sequential: bool,
    /// Re-issue an out-of-range final combine once.
    #[arg(long)]
    reprompt: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Summary text files.
    summaries: Vec<PathBuf>,
    /// Run record JSON files written by `summarize`.
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
    /// Corpus size for utilization of the plain-text summaries.
    #[arg(long, conflicts_with = "corpus")]
    corpus_size: Option<usize>,
    /// Corpus file whose size applies to the plain-text summaries.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus files whose concatenated descriptions form the readability
    /// baseline, one SMOG value per file.
    #[arg(long)]
    baseline: Vec<PathBuf>,
    /// Pooled-variance t-test instead of Welch.
    #[arg(long)]
    pooled: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the ROUGE-L F1 of CANDIDATE against REFERENCE and exit.
    #[arg(long, num_args = 2, value_names = ["REFERENCE", "CANDIDATE"])]
    rouge: Option<Vec<PathBuf>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Fetch(a) => cmd_fetch(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_fetch(args: FetchArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.base_url {
        cfg.registry.base_url = v;
    }
    if let Some(v) = args.page_size {
        cfg.registry.page_size = v;
    }
    if let Some(v) = args.max_records {
        cfg.registry.max_records = v;
    }
    let device = args.device.or(cfg.device).unwrap_or_else(|| args.query.clone());
    let field = args.field.or(cfg.field).unwrap_or(MedicalField::Other);
    let recency = args.recency.or(cfg.recency);
    let today = args.reference_date.unwrap_or_else(|| chrono::Local::now().date_naive());

    let client = RegistryClient::new(&cfg.registry.base_url);
    let query = Query::new(&args.query, cfg.registry.page_size)?;
    let fetched = client.fetch_all(&query, cfg.registry.max_records)?;

    let mut attrition: BTreeMap<String, usize> = BTreeMap::new();
    let mut kept = Vec::new();
    for mut trial in fetched.trials.iter().cloned() {
        if let Some(reason) = exclusion_reason(&trial) {
            *attrition.entry(format!("{reason:?}")).or_default() += 1;
            continue;
        }
        if let Some(wanted) = recency {
            match classify_recency(&trial, today) {
                Ok(class) if class == wanted => {}
                Ok(_) => {
                    *attrition.entry("OutsideRecencyClass".into()).or_default() += 1;
                    continue;
                }
                Err(_) => {
                    *attrition.entry("MissingDate".into()).or_default() += 1;
                    continue;
                }
            }
        }
        if !trial.field_labels.contains(&field) {
            trial.field_labels.push(field.clone());
        }
        kept.push(trial);
    }

    println!("fetched   {:>6}", fetched.trials.len());
    for (reason, n) in &attrition {
        println!("- {:<22} {n:>6}", to_snake(reason));
    }
    println!("kept      {:>6}", kept.len());
    if kept.is_empty() {
        bail!("no trials left after filtering; nothing written");
    }
    let corpus = Corpus::new(device, field, recency.unwrap_or(RecencyClass::CompletedWithin5y), kept)?;
    save_corpus(&corpus, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn to_snake(name: &str) -> String {
    let mut out = String::new();
    for (i, c) in name.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push('_');
        }
        out.extend(c.to_lowercase());
    }
    out
}

#[derive(Serialize)]
struct RunOutput<'a> {
    effective_config: &'a RunConfig,
    record: &'a RunRecord,
}

fn cmd_summarize(args: SummarizeArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let p = &mut cfg.pipeline;
    if let Some(v) = args.backend {
        cfg.backend = v;
    }
    if let Some(v) = args.model {
        p.model_id = v;
    }
    if let Some(v) = args.cache_dir {
        p.cache_dir = Some(v);
    }
    if let Some(v) = args.concurrency {
        p.concurrency_limit = v;
    }
    if let Some(v) = args.batch_size {
        p.budget.batch_size = v;
    }
    if let Some(v) = args.token_limit {
        p.budget.token_limit = v;
    }
    if let Some(v) = args.reduce_fan_in {
        p.reduce_fan_in = Some(v);
    }
    if let Some(v) = args.max_cascade_depth {
        p.max_cascade_depth = v;
    }
    if let Some(v) = args.audience {
        p.audience = v;
    }
    if args.sequential {
        p.execution = Execution::Sequential;
    }
    if args.reprompt {
        p.reprompt_out_of_range = true;
    }
    if let Some(v) = args.endpoint {
        cfg.http.endpoint = v;
    }
    if let Some(v) = args.api_key_env {
        cfg.http.api_key_env = v;
    }
    if let Some(v) = args.map_template {
        cfg.templates.map = Some(v);
    }
    if let Some(v) = args.reduce_template {
        cfg.templates.reduce = Some(v);
    }
    cfg.pipeline.budget.token_limit = cfg.pipeline.budget.token_limit.min(cfg.http.token_limit);
    cfg.pipeline.validate()?;

    let backend: Box<dyn Backend> = match cfg.backend {
        BackendKind::Mock => Box::new(MockBackend::new()),
        BackendKind::Http => Box::new(HttpBackend::from_env(&cfg.http)?),
    };
    let templates = PromptTemplates::from_files(cfg.templates.map.as_deref(), cfg.templates.reduce.as_deref())
        .context("reading prompt templates")?;
    templates.check()?;
    let corpus = load_corpus(&args.corpus).with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let cache = match &cfg.pipeline.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir)?,
        None => ResponseCache::in_memory(),
    };
    let pipeline = Pipeline::new(cfg.pipeline.clone(), templates, cache);
    let record = pipeline.run(&corpus, backend.as_ref())?;

    write_file(&args.out, record.final_document().as_bytes())?;
    let record_path = args.record.unwrap_or_else(|| args.out.with_extension("json"));
    let mut json = serde_json::to_vec_pretty(&RunOutput {
        effective_config: &cfg,
        record: &record,
    })?;
    json.push(b'\n');
    write_file(&record_path, &json)?;

    println!("trials              {}", record.corpus_size);
    println!("batches             {:?}", record.batch_sizes);
    println!(
        "llm calls           {} ({} cache hits)",
        record.llm_call_count, record.cache_hits
    );
    println!("summary words       {}", record.final_summary.word_count);
    println!("coverage            {:.3}", record.validation.coverage_fraction);
    println!("hallucination events {}", record.hallucination_events.len());
    for e in &record.hallucination_events {
        println!(
            "  - {:?} [{}] level {} batches {:?}",
            e.kind, e.cited_index, e.level, e.source_batches
        );
    }
    for d in &record.budget_deviations {
        log::info!(
            "level {} batches {:?}: {} words (max {})",
            d.level,
            d.source_batches,
            d.words,
            d.max_words
        );
    }
    println!("wrote {} and {}", args.out.display(), record_path.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

#[derive(serde::Deserialize)]
struct StoredRun {
    record: RunRecord,
}

fn cmd_metrics(args: MetricsArgs) -> anyhow::Result<()> {
    if let Some(pair) = &args.rouge {
        let (reference, candidate) = (read_text(&pair[0])?, read_text(&pair[1])?);
        let score = metrics::rouge_l_texts(&reference, &candidate)
            .with_context(|| format!("scoring {} against {}", pair[1].display(), pair[0].display()))?;
        println!("{}", score.f_score);
        return Ok(());
    }
    let corpus_size = match (&args.corpus, args.corpus_size) {
        (Some(path), _) => Some(load_corpus(path)?.len()),
        (None, n) => n,
    };
    let mut inputs = Vec::new();
    for path in &args.summaries {
        let text = read_text(path)?;
        // a summary document carries its reference list after a blank line
        let body = text
            .split("\n\nReferences:\n")
            .next()
            .unwrap_or_default()
            .trim()
            .to_string();
        inputs.push(SummaryInput {
            name: path.display().to_string(),
            text: body,
            corpus_size,
        });
    }
    for path in &args.runs {
        let run: StoredRun =
            serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
        inputs.push(SummaryInput {
            name: path.display().to_string(),
            text: run.record.final_summary.text,
            corpus_size: Some(run.record.corpus_size),
        });
    }
    if inputs.is_empty() {
        bail!("no summaries given; pass text files, --run records or --rouge");
    }
    let mut baseline_texts = Vec::new();
    for path in &args.baseline {
        let corpus = load_corpus(path)?;
        let joined: Vec<&str> = corpus.trials().iter().map(|t| t.brief_summary.as_str()).collect();
        baseline_texts.push(joined.join(" "));
    }
    let options = ReportOptions {
        execution: Execution::default(),
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        baseline_texts,
        t_test: if args.pooled {
            TTestVariant::Pooled
        } else {
            TTestVariant::Welch
        },
    };
    let report = metrics::evaluate(&inputs, &options)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    match &args.out {
        Some(path) => write_file(path, &json)?,
        None => print!("{}", String::from_utf8(json)?),
    }
    Ok(())
}
