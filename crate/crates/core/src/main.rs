use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use hlscore::discriminator::{ThresholdConfig, ThresholdMode, DEFAULT_FP_B, DEFAULT_K};
use hlscore::lm::{Backend, LanguageModel, NgramModel, StubBackend, DEFAULT_FLOOR_PROB};
use hlscore::metrics::ReportMetadata;
use hlscore::pipeline::{
    self, load_corpus, load_ratings_csv, ratings_from_corpus, CheckupPolicy, CorpusFormat,
    CorrelationEncoding, PipelineConfig, SampleRecord, Tokenizer,
};
use hlscore::remote::{LoopbackServer, RemoteBackend, RemoteBackendConfig, ENDPOINT_ENV};
use hlscore::scoring::{write_token_csv, CheckupConfig, SampleScore};

#[derive(Parser)]
#[command(
    name = "hlscore",
    version,
    about = "Score how human-like generated text looks to a language model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an interpolated n-gram model on a corpus.
    TrainLm(TrainArgs),
    /// Score a corpus and write per-sample and per-token artifacts.
    Score(ScoreArgs),
    /// Classify previously scored samples.
    Classify(ClassifyArgs),
    /// Score, classify and aggregate a corpus into a report.
    Evaluate(EvaluateArgs),
    /// Derive thresholds from a labeled corpus.
    Calibrate(CalibrateArgs),
    /// Correlate scores with human ratings.
    Correlate(CorrelateArgs),
    /// Serve a local model over the remote protocol.
    #[command(name = "serve-stub")]
    Serve(ServeArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Corpus file: JSONL records or one sample per line.
    #[arg(long)]
    input: PathBuf,
    /// Override format detection from the file extension.
    #[arg(long, value_enum)]
    format: Option<CorpusFormat>,
}

#[derive(Args)]
struct BackendArgs {
    /// `ngram:PATH`, `stub:PATH`, `remote` or `remote:URL`.
    #[arg(long)]
    backend: String,
    /// Remote service base URL.
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    #[arg(long, default_value_t = 2)]
    max_retries: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    max_in_flight: usize,
}

#[derive(Args)]
struct ScoringArgs {
    #[arg(long, default_value = "lower-punct")]
    tokenizer: Tokenizer,
    #[arg(long, value_enum, default_value_t = CheckupPolicy::Annotate)]
    checkup_policy: CheckupPolicy,
    #[arg(long, default_value_t = CheckupConfig::default().repetition_window)]
    repetition_window: usize,
    #[arg(long, default_value_t = CheckupConfig::default().max_repeats)]
    max_repeats: usize,
    #[arg(long, default_value_t = CheckupConfig::default().min_tokens)]
    min_tokens: usize,
    /// Scoring threads for local backends.
    #[arg(long)]
    workers: Option<usize>,
    /// Record a warning instead of failing when thresholds belong to another backend.
    #[arg(long)]
    allow_backend_mismatch: bool,
}

impl ScoringArgs {
    fn config(&self) -> PipelineConfig {
        let default_workers = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(8);
        PipelineConfig {
            tokenizer: self.tokenizer,
            checkups: CheckupConfig {
                repetition_window: self.repetition_window,
                max_repeats: self.max_repeats,
                min_tokens: self.min_tokens,
            },
            checkup_policy: self.checkup_policy,
            workers: self.workers.unwrap_or(default_workers).max(1),
            allow_backend_mismatch: self.allow_backend_mismatch,
        }
    }
}

#[derive(Args)]
struct ThresholdArgs {
    /// Threshold file produced by `calibrate`.
    #[arg(long, conflicts_with_all = ["fp_b", "fp_l", "fp_h"])]
    thresholds: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["fp_l", "fp_h"])]
    fp_b: Option<f64>,
    #[arg(long, requires = "fp_h")]
    fp_l: Option<f64>,
    #[arg(long, requires = "fp_l")]
    fp_h: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// One weight for every order, or a comma-separated weight per order from 2 up.
    #[arg(long, value_delimiter = ',')]
    smoothing: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_FLOOR_PROB)]
    floor: f64,
    #[arg(long, default_value = "lower-punct")]
    tokenizer: Tokenizer,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Per-sample JSONL.
    #[arg(long)]
    samples_out: PathBuf,
    /// Per-token CSV.
    #[arg(long)]
    tokens_out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Per-sample JSONL from `score`.
    #[arg(long)]
    records: PathBuf,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    allow_backend_mismatch: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Calibrate thresholds on this labeled corpus before evaluating.
    #[arg(long)]
    calibrate_from: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ThresholdMode::Single)]
    mode: ThresholdMode,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: f64,
    /// Report path.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    samples_out: Option<PathBuf>,
    #[arg(long)]
    tokens_out: Option<PathBuf>,
    /// Leave the generation timestamp out of the report.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Labeled corpus (JSONL with `label`).
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long, value_enum, default_value_t = ThresholdMode::Single)]
    mode: ThresholdMode,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Per-sample JSONL from `score` or `evaluate`.
    #[arg(long)]
    records: PathBuf,
    /// CSV with `sample_id,rating`.
    #[arg(long, conflicts_with = "ratings_corpus")]
    ratings: Option<PathBuf>,
    /// JSONL corpus carrying inline `rating` fields.
    #[arg(long)]
    ratings_corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CorrelationEncoding::Fp)]
    encoding: CorrelationEncoding,
    /// Drop u-class samples under the class encoding.
    #[arg(long)]
    exclude_unknown: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// `ngram:PATH` or `stub:PATH`.
    #[arg(long)]
    backend: String,
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    /// Tokenizer name advertised to clients.
    #[arg(long, default_value = "lower-punct")]
    tokenizer: Tokenizer,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainLm(a) => train(a),
        Command::Score(a) => score(a),
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Correlate(a) => correlate(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_local(backend: &str) -> Result<Option<Arc<dyn LanguageModel>>> {
    if let Some(path) = backend.strip_prefix("ngram:") {
        let model =
            NgramModel::load(path).with_context(|| format!("loading n-gram model {path}"))?;
        return Ok(Some(Arc::new(model)));
    }
    if let Some(path) = backend.strip_prefix("stub:") {
        let stub = StubBackend::load(path).with_context(|| format!("loading stub table {path}"))?;
        return Ok(Some(Arc::new(stub)));
    }
    Ok(None)
}

fn open_backend(args: &BackendArgs) -> Result<Box<dyn Backend>> {
    if let Some(local) = load_local(&args.backend)? {
        return Ok(Box::new(ArcBackend(local)));
    }
    let url = match args.backend.as_str() {
        "remote" => args
            .endpoint
            .clone()
            .with_context(|| format!("--backend remote needs --endpoint or {ENDPOINT_ENV}"))?,
        other => match other.strip_prefix("remote:") {
            Some(url) => url.to_string(),
            None => {
                bail!("unknown backend {other:?}; expected ngram:PATH, stub:PATH or remote[:URL]")
            }
        },
    };
    if !(args.timeout_secs.is_finite() && args.timeout_secs > 0.0) {
        bail!("--timeout-secs must be positive");
    }
    let config = RemoteBackendConfig {
        timeout: Duration::from_secs_f64(args.timeout_secs),
        max_retries: args.max_retries,
        batch_size: args.batch_size,
        max_in_flight: args.max_in_flight,
        ..RemoteBackendConfig::new(url)
    };
    let remote = RemoteBackend::connect(config).context("connecting to remote backend")?;
    info!(
        "connected to remote backend {}",
        remote.descriptor().backend_id
    );
    Ok(Box::new(remote))
}

struct ArcBackend(Arc<dyn LanguageModel>);

impl Backend for ArcBackend {
    fn backend_id(&self) -> &str {
        self.0.backend_id()
    }

    fn batch_token_stats(
        &self,
        samples: &[Vec<String>],
    ) -> std::result::Result<Vec<Vec<hlscore::lm::NextTokenStats>>, hlscore::lm::BackendError> {
        Backend::batch_token_stats(&*self.0, samples)
    }
}

fn write_records(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut buf = Vec::new();
    pipeline::write_records_jsonl(&mut buf, records)?;
    pipeline::write_atomic(path, &buf).with_context(|| format!("writing {}", path.display()))
}

fn write_tokens(path: &Path, scores: &[SampleScore]) -> Result<()> {
    let mut buf = Vec::new();
    write_token_csv(&mut buf, scores)?;
    pipeline::write_atomic(path, &buf).with_context(|| format!("writing {}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(pipeline::read_records_jsonl(std::io::BufReader::new(file))?)
}

/// Thresholds given explicitly on the command line or in a file.
fn explicit_thresholds(
    args: &ThresholdArgs,
    backend_id: &str,
) -> Result<Option<(ThresholdConfig, String)>> {
    if let Some(path) = &args.thresholds {
        let config = ThresholdConfig::load(path)
            .with_context(|| format!("loading thresholds {}", path.display()))?;
        return Ok(Some((config, format!("file:{}", path.display()))));
    }
    if let Some(fp_b) = args.fp_b {
        return Ok(Some((
            ThresholdConfig::single(fp_b, backend_id)?,
            "flags".into(),
        )));
    }
    if let (Some(fp_l), Some(fp_h)) = (args.fp_l, args.fp_h) {
        return Ok(Some((
            ThresholdConfig::dual(fp_l, fp_h, backend_id)?,
            "flags".into(),
        )));
    }
    Ok(None)
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.input.input, a.input.format)?;
    let sequences = corpus
        .iter()
        .map(|s| a.tokenizer.tokenize(&s.text))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let model = NgramModel::train(&sequences, a.order, &a.smoothing, a.floor)?;
    let json = model.to_json();
    pipeline::write_atomic(&a.output, json.as_bytes())?;
    println!("{}", LanguageModel::backend_id(&model));
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let config = a.scoring.config();
    let backend = open_backend(&a.backend)?;
    let corpus = load_corpus(&a.input.input, a.input.format)?;
    let scores = pipeline::score_corpus(&config, backend.as_ref(), &corpus)?;
    let records: Vec<SampleRecord> = scores
        .iter()
        .map(|s| SampleRecord::from_score(s, config.tokenizer.name()))
        .collect();
    write_records(&a.samples_out, &records)?;
    if let Some(path) = &a.tokens_out {
        write_tokens(path, &scores)?;
    }
    println!(
        "scored {} samples with {}",
        scores.len(),
        backend.backend_id()
    );
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let mut records = read_records(&a.records)?;
    let Some(first) = records.first() else {
        bail!("{} holds no records", a.records.display());
    };
    let backend_id = first.backend_id.clone();
    let (thresholds, _) = explicit_thresholds(&a.thresholds, &backend_id)?.unwrap_or((
        ThresholdConfig::single(DEFAULT_FP_B, &backend_id)?,
        "default".into(),
    ));
    for record in &mut records {
        if record.backend_id != thresholds.backend_id() {
            if !a.allow_backend_mismatch {
                bail!(
                    "thresholds were calibrated for backend {:?} but {:?} was scored with {:?}",
                    thresholds.backend_id(),
                    record.sample_id,
                    record.backend_id
                );
            }
            log::warn!("backend mismatch for {:?}", record.sample_id);
        }
        record.class = Some(hlscore::discriminator::classify(record.fp, &thresholds)?);
    }
    write_records(&a.output, &records)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let config = a.scoring.config();
    let backend = open_backend(&a.backend)?;
    let corpus = load_corpus(&a.input.input, a.input.format)?;
    let explicit = explicit_thresholds(&a.thresholds, backend.backend_id())?;
    if explicit.is_some() && a.calibrate_from.is_some() {
        bail!("--calibrate-from cannot be combined with explicit thresholds");
    }
    let (thresholds, source) = match explicit {
        Some(t) => t,
        None => match &a.calibrate_from {
            Some(path) => {
                let labeled = load_corpus(path, None)?;
                let outcome =
                    pipeline::run_calibration(&config, backend.as_ref(), &labeled, a.k, a.mode)?;
                (outcome.thresholds, format!("calibrated:{}", path.display()))
            }
            None => (
                ThresholdConfig::single(DEFAULT_FP_B, backend.backend_id())?,
                "default".into(),
            ),
        },
    };
    let metadata = if a.no_timestamp {
        ReportMetadata::untimed()
    } else {
        ReportMetadata::now()
    };
    let evaluation = pipeline::run_evaluation(
        &config,
        backend.as_ref(),
        &thresholds,
        &source,
        &corpus,
        metadata,
    )?;
    // Nothing is written until every sample has been scored.
    pipeline::write_atomic(&a.output, evaluation.report.to_json().as_bytes())?;
    if let Some(path) = &a.samples_out {
        write_records(path, &evaluation.records)?;
    }
    if let Some(path) = &a.tokens_out {
        write_tokens(path, &evaluation.scores)?;
    }
    let r = &evaluation.report;
    println!(
        "h={:.4} m={:.4} u={:.4} mean_fp={:.4} n={}",
        r.h_score, r.m_score, r.u_fraction, r.mean_fp, r.n_evaluated
    );
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let config = a.scoring.config();
    let backend = open_backend(&a.backend)?;
    let labeled = load_corpus(&a.input.input, a.input.format)?;
    let outcome = pipeline::run_calibration(&config, backend.as_ref(), &labeled, a.k, a.mode)?;
    outcome.thresholds.save(&a.output)?;
    print!("{}", outcome.thresholds.to_json());
    Ok(())
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let ratings = match (&a.ratings, &a.ratings_corpus) {
        (Some(path), _) => load_ratings_csv(path)?,
        (None, Some(path)) => ratings_from_corpus(&load_corpus(path, None)?),
        (None, None) => bail!("pass --ratings or --ratings-corpus"),
    };
    let report = pipeline::run_correlation(&records, &ratings, a.encoding, !a.exclude_unknown)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.output {
        Some(path) => pipeline::write_atomic(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let Some(model) = load_local(&a.backend)? else {
        bail!("serve needs a local backend (ngram:PATH or stub:PATH)");
    };
    let server = LoopbackServer::bind(&a.addr, model, a.tokenizer.name())?;
    eprintln!("serving on {}", server.url());
    server.serve();
    Ok(())
}
