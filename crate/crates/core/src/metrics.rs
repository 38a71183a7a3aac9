//! Corpus-level aggregation: h/m scores, mean Fp, and agreement with human
//! ratings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discriminator::{ClassLabel, ThresholdConfig, ThresholdMode};
use crate::scoring::SampleScore;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples to aggregate")]
    EmptyEvaluation,
    #[error("single-mode scores cannot include {0} unknown samples")]
    UnknownInSingleMode(usize),
    #[error("samples come from different backends: {0:?} and {1:?}")]
    BackendMismatch(String, String),
    #[error("length mismatch: {predicted} predictions vs {human} ratings")]
    LengthMismatch { predicted: usize, human: usize },
    #[error("correlation needs at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("correlation is undefined: {0} values have zero variance")]
    UndefinedCorrelation(&'static str),
    #[error("non-finite value in correlation input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_h: usize,
    pub n_m: usize,
    pub n_u: usize,
}

impl ClassCounts {
    pub fn from_labels<I: IntoIterator<Item = ClassLabel>>(labels: I) -> Self {
        let mut counts = Self::default();
        for label in labels {
            counts.add(label);
        }
        counts
    }

    pub fn add(&mut self, label: ClassLabel) {
        match label {
            ClassLabel::Human => self.n_h += 1,
            ClassLabel::Machine => self.n_m += 1,
            ClassLabel::Unknown => self.n_u += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.n_h + self.n_m + self.n_u
    }
}

/// `h = n_h / (n_h + n_m)`, `m = n_m / (n_h + n_m)`.
pub fn h_score_single(counts: &ClassCounts) -> Result<(f64, f64), MetricsError> {
    if counts.n_u > 0 {
        return Err(MetricsError::UnknownInSingleMode(counts.n_u));
    }
    let n = counts.n_h + counts.n_m;
    if n == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let n = n as f64;
    Ok((counts.n_h as f64 / n, counts.n_m as f64 / n))
}

/// `h = n_h / n`, `m = n_m / n` with `n = n_h + n_m + n_u`.
pub fn h_score_dual(counts: &ClassCounts) -> Result<(f64, f64), MetricsError> {
    let n = counts.total();
    if n == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let n = n as f64;
    Ok((counts.n_h as f64 / n, counts.n_m as f64 / n))
}

/// Equal-weight mean of per-sample Fp values.
pub fn corpus_mean_fp(samples: &[SampleScore]) -> Result<f64, MetricsError> {
    mean_fp_of(samples.iter())
}

fn mean_fp_of<'a>(samples: impl Iterator<Item = &'a SampleScore>) -> Result<f64, MetricsError> {
    let mut first: Option<&str> = None;
    let (mut sum, mut n) = (0.0, 0usize);
    for s in samples {
        match first {
            None => first = Some(&s.backend_id),
            Some(id) if id != s.backend_id => {
                return Err(MetricsError::BackendMismatch(
                    id.to_string(),
                    s.backend_id.clone(),
                ))
            }
            Some(_) => {}
        }
        sum += s.fp;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

/// Numeric encoding of a class label for correlation: h=1, u=0.5, m=0.
pub fn class_value(label: ClassLabel) -> f64 {
    match label {
        ClassLabel::Human => 1.0,
        ClassLabel::Unknown => 0.5,
        ClassLabel::Machine => 0.0,
    }
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end share their mean.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::UndefinedCorrelation("predicted"));
    }
    if syy == 0.0 {
        return Err(MetricsError::UndefinedCorrelation("human"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn correlate_with_human(predicted: &[f64], human: &[f64]) -> Result<Correlation, MetricsError> {
    if predicted.len() != human.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            human: human.len(),
        });
    }
    if predicted.len() < 3 {
        return Err(MetricsError::TooFewPairs(predicted.len()));
    }
    if predicted.iter().chain(human).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(Correlation {
        pearson: pearson(predicted, human)?,
        spearman: pearson(&average_ranks(predicted), &average_ranks(human))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl ReportMetadata {
    pub fn now() -> Self {
        Self {
            generated_at: Some(
                chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            ),
            ..Self::untimed()
        }
    }

    pub fn untimed() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub backend_id: String,
    pub tokenizer_name: String,
    pub mode: ThresholdMode,
    pub threshold_config: ThresholdConfig,
    /// Where the thresholds came from: `file:<path>`, `flags`, or `calibrated:<path>`.
    pub threshold_source: String,
    pub checkup_policy: String,
    /// Corpus size before any exclusion.
    pub n_samples: usize,
    /// Samples in the denominators.
    pub n_evaluated: usize,
    pub counts: ClassCounts,
    pub h_score: f64,
    pub m_score: f64,
    pub u_fraction: f64,
    pub mean_fp: f64,
    pub flagged_samples: usize,
    pub excluded_samples: Vec<String>,
    pub warnings: Vec<String>,
    pub metadata: ReportMetadata,
}

impl EvaluationReport {
    /// Aggregate the scores and labels of the evaluated (non-excluded) samples.
    #[allow(clippy::too_many_arguments)]
    pub fn aggregate(
        evaluated: &[(&SampleScore, ClassLabel)],
        n_samples: usize,
        flagged_samples: usize,
        excluded_samples: Vec<String>,
        threshold_config: ThresholdConfig,
        threshold_source: String,
        tokenizer_name: String,
        checkup_policy: String,
        warnings: Vec<String>,
        metadata: ReportMetadata,
    ) -> Result<Self, MetricsError> {
        let counts = ClassCounts::from_labels(evaluated.iter().map(|(_, l)| *l));
        let mode = threshold_config.mode();
        let (h_score, m_score) = match mode {
            ThresholdMode::Single => h_score_single(&counts)?,
            ThresholdMode::Dual => h_score_dual(&counts)?,
        };
        let mean_fp = mean_fp_of(evaluated.iter().map(|(s, _)| *s))?;
        let n = counts.total();
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            backend_id: evaluated[0].0.backend_id.clone(),
            tokenizer_name,
            mode,
            threshold_config,
            threshold_source,
            checkup_policy,
            n_samples,
            n_evaluated: n,
            counts,
            h_score,
            m_score,
            u_fraction: counts.n_u as f64 / n as f64,
            mean_fp,
            flagged_samples,
            excluded_samples,
            warnings,
            metadata,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
