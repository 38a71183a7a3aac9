//! Language-model backends.
//!
//! A backend supplies the next-token distribution `p(x_i | x_1..x_{i-1})` and
//! the per-position statistics derived from it: the probability of the
//! observed token, the highest probability at that position, the observed
//! token's rank, and the entropy of the distribution.
//!
//! Two local backends ship with the crate: a trainable interpolated n-gram
//! model ([`NgramModel`]) and a fixed-table stub ([`StubBackend`]). Remote
//! models are reached through [`crate::remote::RemoteBackend`], which
//! implements the same [`Backend`] contract.

mod ngram;
mod stub;

pub use ngram::{NgramError, NgramModel, DEFAULT_FLOOR_PROB, DEFAULT_SMOOTHING};
pub use stub::{StubBackend, StubEntry, StubError};

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::RemoteError;

/// Statistics of one observed token at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTokenStats {
    /// Probability of the observed token.
    pub actual_prob: f64,
    /// Highest probability assigned to any vocabulary token.
    pub top_prob: f64,
    /// Token achieving `top_prob`, ties broken lexicographically. Remote
    /// servers are not required to send it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_token: Option<String>,
    /// 1-based rank of the observed token; `|V| + 1` for out-of-vocabulary tokens.
    pub rank: usize,
    /// Shannon entropy of the distribution in nats.
    pub entropy: f64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("sample {index} is empty")]
    EmptySample { index: usize },
    #[error(transparent)]
    Remote(#[from] RemoteError),
}

/// A full next-token distribution over the vocabulary plus one OOV slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<'a> {
    vocabulary: &'a [String],
    probs: Vec<f64>,
    oov_prob: f64,
}

impl<'a> Distribution<'a> {
    pub(crate) fn new(vocabulary: &'a [String], probs: Vec<f64>, oov_prob: f64) -> Self {
        debug_assert_eq!(vocabulary.len(), probs.len());
        Self {
            vocabulary,
            probs,
            oov_prob,
        }
    }

    pub fn vocabulary(&self) -> &'a [String] {
        self.vocabulary
    }

    /// Probabilities aligned with [`Self::vocabulary`].
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn oov_prob(&self) -> f64 {
        self.oov_prob
    }

    /// Total mass over vocabulary and OOV.
    pub fn total(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.oov_prob
    }

    /// Index of the highest-probability vocabulary token; ties go to the
    /// lexicographically smallest token.
    pub fn top_index(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probs.len() {
            match self.probs[i].total_cmp(&self.probs[best]) {
                Ordering::Greater => best = i,
                Ordering::Equal if self.vocabulary[i] < self.vocabulary[best] => best = i,
                _ => {}
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .chain(std::iter::once(&self.oov_prob))
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Statistics for the vocabulary token at `observed`, or for an OOV token
    /// when `observed` is `None`.
    pub fn stats(&self, observed: Option<usize>) -> NextTokenStats {
        let top = self.top_index();
        let top_prob = self.probs[top];
        let (actual_prob, rank) = match observed {
            Some(idx) => {
                let p = self.probs[idx];
                let token = &self.vocabulary[idx];
                let ahead = self
                    .probs
                    .iter()
                    .zip(self.vocabulary)
                    .filter(|(&q, v)| q > p || (q == p && *v < token))
                    .count();
                (p, ahead + 1)
            }
            None => (self.oov_prob, self.vocabulary.len() + 1),
        };
        NextTokenStats {
            actual_prob,
            top_prob,
            top_token: Some(self.vocabulary[top].clone()),
            rank,
            entropy: self.entropy(),
        }
    }
}

/// A local model that can materialize a full next-token distribution.
pub trait LanguageModel: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Vocabulary in the order distributions are reported.
    fn vocabulary(&self) -> &[String];

    /// Maximum number of preceding tokens the model conditions on.
    fn context_window(&self) -> usize;

    fn token_index(&self, token: &str) -> Option<usize>;

    /// Distribution of the next token given `context`. Only the last
    /// [`Self::context_window`] tokens are consulted.
    fn next_token_distribution(&self, context: &[String]) -> Distribution<'_>;

    fn token_stats(&self, context: &[String], observed: &str) -> NextTokenStats {
        self.next_token_distribution(context)
            .stats(self.token_index(observed))
    }

    /// Per-position statistics for a whole sequence.
    fn sequence_stats(&self, tokens: &[String]) -> Vec<NextTokenStats> {
        let window = self.context_window();
        tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| self.token_stats(&tokens[i.saturating_sub(window)..i], tok))
            .collect()
    }
}

/// The scoring-facing backend contract shared by local and remote backends.
pub trait Backend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Name of the tokenizer the backend expects, if it declares one.
    fn tokenizer_name(&self) -> Option<&str> {
        None
    }

    /// Statistics for every position of every sample, aligned with the input.
    fn batch_token_stats(
        &self,
        samples: &[Vec<String>],
    ) -> Result<Vec<Vec<NextTokenStats>>, BackendError>;
}

impl<M: LanguageModel + ?Sized> Backend for M {
    fn backend_id(&self) -> &str {
        LanguageModel::backend_id(self)
    }

    fn batch_token_stats(
        &self,
        samples: &[Vec<String>],
    ) -> Result<Vec<Vec<NextTokenStats>>, BackendError> {
        if let Some(index) = samples.iter().position(Vec::is_empty) {
            return Err(BackendError::EmptySample { index });
        }
        Ok(samples
            .par_iter()
            .map(|tokens| self.sequence_stats(tokens))
            .collect())
    }
}
