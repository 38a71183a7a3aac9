//! Per-token frac(p) and the per-sample average Fp, plus text checkups.
//!
//! frac(p) is the probability of the observed token divided by the highest
//! probability any token has at that position. A sample's Fp is the
//! unweighted mean of frac(p) over its positions, so text built only from
//! top-ranked tokens scores exactly 1.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{Backend, BackendError, NextTokenStats};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("sample {sample_id:?} has no tokens")]
    EmptySample { sample_id: String },
    #[error("top probability {top_prob} is not a valid maximum")]
    InvalidDistribution { top_prob: f64 },
    #[error("observed probability {actual_prob} exceeds top probability {top_prob}")]
    InvariantViolation { actual_prob: f64, top_prob: f64 },
    #[error("backend returned {got} samples for {expected} requested")]
    Misaligned { expected: usize, got: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("writing token dump: {0}")]
    Csv(#[from] csv::Error),
}

/// Ratio of observed to top probability, taken in the log domain.
pub fn frac_p(actual_prob: f64, top_prob: f64) -> Result<f64, ScoreError> {
    if !(top_prob > 0.0 && top_prob <= 1.0) {
        return Err(ScoreError::InvalidDistribution { top_prob });
    }
    if actual_prob.is_nan() || actual_prob < 0.0 || actual_prob > top_prob {
        return Err(ScoreError::InvariantViolation {
            actual_prob,
            top_prob,
        });
    }
    Ok((actual_prob.ln() - top_prob.ln()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckupFlag {
    Repetition,
    ShortSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckupConfig {
    pub repetition_window: usize,
    pub max_repeats: usize,
    /// Samples with fewer tokens get [`CheckupFlag::ShortSample`].
    pub min_tokens: usize,
}

impl Default for CheckupConfig {
    fn default() -> Self {
        Self {
            repetition_window: 10,
            max_repeats: 3,
            min_tokens: 5,
        }
    }
}

/// True when some token occurs more than `max_repeats` times inside a
/// window of `window` consecutive tokens. Sequences shorter than the window
/// are checked as a single window.
pub fn checkup_repetition(tokens: &[String], window: usize, max_repeats: usize) -> bool {
    let window = window.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (i, tok) in tokens.iter().enumerate() {
        let c = counts.entry(tok.as_str()).or_insert(0);
        *c += 1;
        if *c > max_repeats {
            return true;
        }
        if i + 1 >= window {
            let leaving = tokens[i + 1 - window].as_str();
            if let Some(c) = counts.get_mut(leaving) {
                *c -= 1;
            }
        }
    }
    false
}

pub fn run_checkups(tokens: &[String], config: &CheckupConfig) -> BTreeSet<CheckupFlag> {
    let mut flags = BTreeSet::new();
    if checkup_repetition(tokens, config.repetition_window, config.max_repeats) {
        flags.insert(CheckupFlag::Repetition);
    }
    if tokens.len() < config.min_tokens {
        flags.insert(CheckupFlag::ShortSample);
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub stats: NextTokenStats,
    pub frac_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub token_scores: Vec<TokenScore>,
    pub fp: f64,
    pub n_tokens: usize,
    pub checkup_flags: BTreeSet<CheckupFlag>,
    pub backend_id: String,
}

impl SampleScore {
    /// Assemble a score from already-computed per-position statistics.
    pub fn from_stats(
        sample_id: impl Into<String>,
        tokens: &[String],
        stats: Vec<NextTokenStats>,
        backend_id: impl Into<String>,
        checkups: &CheckupConfig,
    ) -> Result<Self, ScoreError> {
        let sample_id = sample_id.into();
        if tokens.is_empty() {
            return Err(ScoreError::EmptySample { sample_id });
        }
        if stats.len() != tokens.len() {
            return Err(ScoreError::Misaligned {
                expected: tokens.len(),
                got: stats.len(),
            });
        }
        let token_scores = tokens
            .iter()
            .zip(stats)
            .map(|(token, stats)| {
                Ok(TokenScore {
                    token: token.clone(),
                    frac_p: frac_p(stats.actual_prob, stats.top_prob)?,
                    stats,
                })
            })
            .collect::<Result<Vec<_>, ScoreError>>()?;
        let n_tokens = token_scores.len();
        let fp = token_scores.iter().map(|t| t.frac_p).sum::<f64>() / n_tokens as f64;
        Ok(Self {
            sample_id,
            token_scores,
            fp,
            n_tokens,
            checkup_flags: run_checkups(tokens, checkups),
            backend_id: backend_id.into(),
        })
    }

    pub fn is_flagged(&self) -> bool {
        !self.checkup_flags.is_empty()
    }
}

pub fn score_sample(
    backend: &dyn Backend,
    sample_id: &str,
    tokens: &[String],
    checkups: &CheckupConfig,
) -> Result<SampleScore, ScoreError> {
    if tokens.is_empty() {
        return Err(ScoreError::EmptySample {
            sample_id: sample_id.to_string(),
        });
    }
    let mut stats = backend.batch_token_stats(&[tokens.to_vec()])?;
    let stats = stats.pop().ok_or(ScoreError::Misaligned {
        expected: 1,
        got: 0,
    })?;
    SampleScore::from_stats(sample_id, tokens, stats, backend.backend_id(), checkups)
}

/// Score many samples with a single backend call. Output order follows input.
pub fn score_samples(
    backend: &dyn Backend,
    samples: &[(String, Vec<String>)],
    checkups: &CheckupConfig,
) -> Result<Vec<SampleScore>, ScoreError> {
    if let Some((id, _)) = samples.iter().find(|(_, t)| t.is_empty()) {
        return Err(ScoreError::EmptySample {
            sample_id: id.clone(),
        });
    }
    let token_lists: Vec<Vec<String>> = samples.iter().map(|(_, t)| t.clone()).collect();
    let stats = backend.batch_token_stats(&token_lists)?;
    if stats.len() != samples.len() {
        return Err(ScoreError::Misaligned {
            expected: samples.len(),
            got: stats.len(),
        });
    }
    samples
        .iter()
        .zip(stats)
        .map(|((id, tokens), s)| {
            SampleScore::from_stats(id.clone(), tokens, s, backend.backend_id(), checkups)
        })
        .collect()
}

#[derive(Serialize)]
struct TokenRow<'a> {
    sample_id: &'a str,
    position: usize,
    token: &'a str,
    actual_prob: f64,
    top_prob: f64,
    rank: usize,
    entropy: f64,
    frac_p: f64,
}

/// Per-token CSV dump; positions are 1-based.
pub fn write_token_csv<W: Write>(writer: W, scores: &[SampleScore]) -> Result<(), ScoreError> {
    let mut out = csv::Writer::from_writer(writer);
    for sample in scores {
        for (i, t) in sample.token_scores.iter().enumerate() {
            out.serialize(TokenRow {
                sample_id: &sample.sample_id,
                position: i + 1,
                token: &t.token,
                actual_prob: t.stats.actual_prob,
                top_prob: t.stats.top_prob,
                rank: t.stats.rank,
                entropy: t.stats.entropy,
                frac_p: t.frac_p,
            })?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
