//! Orchestration: tokenize, score, classify, aggregate, calibrate, correlate.

mod corpus;
mod tokenize;

pub use corpus::{
    load_corpus, load_ratings_csv, ratings_from_corpus, read_jsonl, read_plain, read_ratings_csv,
    validate_corpus, CorpusError, CorpusFormat, Label, Rating, Sample,
};
pub use tokenize::{TokenizeError, Tokenizer};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discriminator::{
    calibrate, classify, ClassLabel, DiscriminatorError, ThresholdConfig, ThresholdMode,
};
use crate::lm::Backend;
use crate::metrics::{
    class_value, correlate_with_human, EvaluationReport, MetricsError, ReportMetadata,
};
use crate::scoring::{score_samples, CheckupConfig, CheckupFlag, SampleScore, ScoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("sample {sample_id:?}: {source}")]
    Tokenize {
        sample_id: String,
        source: TokenizeError,
    },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Discriminator(#[from] DiscriminatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(
        "thresholds were calibrated for backend {thresholds:?} but scores come from {backend:?}"
    )]
    BackendMismatch { thresholds: String, backend: String },
    #[error("calibration samples without a label: {0:?}")]
    MissingLabels(Vec<String>),
    #[error("every sample was excluded by the checkup policy")]
    AllExcluded,
    #[error("cannot join ratings to scores; no rating for {missing_ratings:?}, no score for {unknown_ids:?}")]
    Join {
        missing_ratings: Vec<String>,
        unknown_ids: Vec<String>,
    },
    #[error("sample {0:?} has no class; run classify or evaluate first")]
    Unclassified(String),
    #[error("worker pool: {0}")]
    Workers(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CheckupPolicy {
    /// Flag samples but keep them in every aggregate.
    #[default]
    Annotate,
    /// Drop flagged samples from all denominators and list them separately.
    Exclude,
}

impl CheckupPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckupPolicy::Annotate => "annotate",
            CheckupPolicy::Exclude => "exclude",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub tokenizer: Tokenizer,
    pub checkups: CheckupConfig,
    pub checkup_policy: CheckupPolicy,
    /// Worker threads used for local scoring.
    pub workers: usize,
    /// Downgrade a threshold/backend id mismatch to a report warning.
    pub allow_backend_mismatch: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::default(),
            checkups: CheckupConfig::default(),
            checkup_policy: CheckupPolicy::default(),
            workers: 1,
            allow_backend_mismatch: false,
        }
    }
}

/// One line of the per-sample JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub n_tokens: usize,
    pub fp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassLabel>,
    pub flags: BTreeSet<CheckupFlag>,
    #[serde(default)]
    pub excluded: bool,
    pub backend_id: String,
    pub tokenizer_name: String,
}

impl SampleRecord {
    pub fn from_score(score: &SampleScore, tokenizer_name: &str) -> Self {
        Self {
            sample_id: score.sample_id.clone(),
            n_tokens: score.n_tokens,
            fp: score.fp,
            class: None,
            flags: score.checkup_flags.clone(),
            excluded: false,
            backend_id: score.backend_id.clone(),
            tokenizer_name: tokenizer_name.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub records: Vec<SampleRecord>,
    pub scores: Vec<SampleScore>,
}

fn tokenize_corpus(
    tokenizer: Tokenizer,
    corpus: &[Sample],
) -> Result<Vec<(String, Vec<String>)>, PipelineError> {
    corpus
        .iter()
        .map(|s| {
            tokenizer
                .tokenize(&s.text)
                .map(|t| (s.sample_id.clone(), t))
                .map_err(|source| PipelineError::Tokenize {
                    sample_id: s.sample_id.clone(),
                    source,
                })
        })
        .collect()
}

/// Tokenize and score a corpus; all samples or none.
pub fn score_corpus(
    config: &PipelineConfig,
    backend: &dyn Backend,
    corpus: &[Sample],
) -> Result<Vec<SampleScore>, PipelineError> {
    validate_corpus(corpus)?;
    let tokenized = tokenize_corpus(config.tokenizer, corpus)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;
    Ok(pool.install(|| score_samples(backend, &tokenized, &config.checkups))?)
}

fn check_backend(
    config: &PipelineConfig,
    thresholds: &ThresholdConfig,
    backend_id: &str,
    warnings: &mut Vec<String>,
) -> Result<(), PipelineError> {
    if thresholds.backend_id() == backend_id {
        return Ok(());
    }
    if config.allow_backend_mismatch {
        warnings.push(format!(
            "thresholds were calibrated for backend {:?} but scores come from {:?}",
            thresholds.backend_id(),
            backend_id
        ));
        Ok(())
    } else {
        Err(PipelineError::BackendMismatch {
            thresholds: thresholds.backend_id().to_string(),
            backend: backend_id.to_string(),
        })
    }
}

/// Classify scored samples and aggregate them into a report.
pub fn evaluate_scores(
    config: &PipelineConfig,
    scores: Vec<SampleScore>,
    thresholds: &ThresholdConfig,
    threshold_source: &str,
    mut warnings: Vec<String>,
    metadata: ReportMetadata,
) -> Result<Evaluation, PipelineError> {
    let first = scores.first().ok_or(MetricsError::EmptyEvaluation)?;
    check_backend(config, thresholds, &first.backend_id, &mut warnings)?;

    let tokenizer_name = config.tokenizer.name();
    let mut records = Vec::with_capacity(scores.len());
    let mut evaluated = Vec::with_capacity(scores.len());
    let mut excluded = Vec::new();
    let mut flagged = 0;
    for score in &scores {
        let mut record = SampleRecord::from_score(score, tokenizer_name);
        let label = classify(score.fp, thresholds)?;
        record.class = Some(label);
        if score.is_flagged() {
            flagged += 1;
            if config.checkup_policy == CheckupPolicy::Exclude {
                record.excluded = true;
                excluded.push(score.sample_id.clone());
            }
        }
        if !record.excluded {
            evaluated.push((score, label));
        }
        records.push(record);
    }
    if evaluated.is_empty() {
        return Err(PipelineError::AllExcluded);
    }

    let report = EvaluationReport::aggregate(
        &evaluated,
        scores.len(),
        flagged,
        excluded,
        thresholds.clone(),
        threshold_source.to_string(),
        tokenizer_name.to_string(),
        config.checkup_policy.as_str().to_string(),
        warnings,
        metadata,
    )?;
    Ok(Evaluation {
        report,
        records,
        scores,
    })
}

fn tokenizer_warning(config: &PipelineConfig, backend: &dyn Backend) -> Option<String> {
    let remote = backend.tokenizer_name()?;
    (remote != config.tokenizer.name()).then(|| {
        format!(
            "backend tokenizer {remote:?} differs from pipeline tokenizer {:?}",
            config.tokenizer.name()
        )
    })
}

/// Score, classify and aggregate a corpus under one backend.
pub fn run_evaluation(
    config: &PipelineConfig,
    backend: &dyn Backend,
    thresholds: &ThresholdConfig,
    threshold_source: &str,
    corpus: &[Sample],
    metadata: ReportMetadata,
) -> Result<Evaluation, PipelineError> {
    // Fail before any scoring work; the warning itself is recorded below.
    check_backend(config, thresholds, backend.backend_id(), &mut Vec::new())?;
    let warnings = tokenizer_warning(config, backend).into_iter().collect();
    let scores = score_corpus(config, backend, corpus)?;
    evaluate_scores(
        config,
        scores,
        thresholds,
        threshold_source,
        warnings,
        metadata,
    )
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub thresholds: ThresholdConfig,
    pub scores: Vec<SampleScore>,
}

/// Score a labeled corpus and derive thresholds from its two groups.
pub fn run_calibration(
    config: &PipelineConfig,
    backend: &dyn Backend,
    labeled: &[Sample],
    k: f64,
    mode: ThresholdMode,
) -> Result<CalibrationOutcome, PipelineError> {
    let unlabeled: Vec<String> = labeled
        .iter()
        .filter(|s| s.label.is_none())
        .map(|s| s.sample_id.clone())
        .collect();
    if !unlabeled.is_empty() {
        return Err(PipelineError::MissingLabels(unlabeled));
    }
    let scores = score_corpus(config, backend, labeled)?;
    let (mut natural, mut synthetic) = (Vec::new(), Vec::new());
    for (sample, score) in labeled.iter().zip(&scores) {
        if config.checkup_policy == CheckupPolicy::Exclude && score.is_flagged() {
            continue;
        }
        match sample.label {
            Some(Label::Natural) => natural.push(score.fp),
            Some(Label::Synthetic) => synthetic.push(score.fp),
            None => unreachable!("labels checked above"),
        }
    }
    let thresholds = calibrate(&natural, &synthetic, k, mode, backend.backend_id())?;
    Ok(CalibrationOutcome { thresholds, scores })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationEncoding {
    /// Raw per-sample Fp.
    #[default]
    Fp,
    /// Class labels mapped h=1, u=0.5, m=0.
    Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
    pub encoding: CorrelationEncoding,
    /// u-class samples left out because unknowns were excluded.
    pub excluded_unknown: usize,
    pub backend_id: String,
}

/// Join per-sample artifacts with human ratings and correlate them.
///
/// Records excluded by the checkup policy take no part; every remaining
/// record needs a rating and every rating needs a record.
pub fn run_correlation(
    records: &[SampleRecord],
    ratings: &[Rating],
    encoding: CorrelationEncoding,
    include_unknown: bool,
) -> Result<CorrelationReport, PipelineError> {
    let by_id: HashMap<&str, f64> = ratings
        .iter()
        .map(|r| (r.sample_id.as_str(), r.rating))
        .collect();
    let known: HashSet<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
    let active: Vec<&SampleRecord> = records.iter().filter(|r| !r.excluded).collect();

    let missing_ratings: Vec<String> = active
        .iter()
        .filter(|r| !by_id.contains_key(r.sample_id.as_str()))
        .map(|r| r.sample_id.clone())
        .collect();
    let unknown_ids: Vec<String> = ratings
        .iter()
        .filter(|r| !known.contains(r.sample_id.as_str()))
        .map(|r| r.sample_id.clone())
        .collect();
    if !missing_ratings.is_empty() || !unknown_ids.is_empty() {
        return Err(PipelineError::Join {
            missing_ratings,
            unknown_ids,
        });
    }

    let mut predicted = Vec::with_capacity(active.len());
    let mut human = Vec::with_capacity(active.len());
    let mut excluded_unknown = 0;
    for record in &active {
        let value = match encoding {
            CorrelationEncoding::Fp => record.fp,
            CorrelationEncoding::Class => {
                let label = record
                    .class
                    .ok_or_else(|| PipelineError::Unclassified(record.sample_id.clone()))?;
                if label == ClassLabel::Unknown && !include_unknown {
                    excluded_unknown += 1;
                    continue;
                }
                class_value(label)
            }
        };
        predicted.push(value);
        human.push(by_id[record.sample_id.as_str()]);
    }
    let corr = correlate_with_human(&predicted, &human)?;
    Ok(CorrelationReport {
        pearson: corr.pearson,
        spearman: corr.spearman,
        n: predicted.len(),
        encoding,
        excluded_unknown,
        backend_id: active
            .first()
            .map(|r| r.backend_id.clone())
            .unwrap_or_default(),
    })
}

pub fn write_records_jsonl<W: Write>(
    mut writer: W,
    records: &[SampleRecord],
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<SampleRecord>, PipelineError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(records)
}

/// Write through a sibling temporary file so readers never see a partial artifact.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
