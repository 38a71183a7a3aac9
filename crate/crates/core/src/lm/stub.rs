use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Distribution, LanguageModel};

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StubError {
    #[error("stub backend_id must not be empty")]
    EmptyBackendId,
    #[error("stub vocabulary must not be empty")]
    EmptyVocabulary,
    #[error("duplicate vocabulary token {0:?}")]
    DuplicateToken(String),
    #[error("stub table has no entry for the empty context")]
    MissingRoot,
    #[error("duplicate table entry for context {0:?}")]
    DuplicateContext(Vec<String>),
    #[error("context {context:?} lists {got} probabilities for a vocabulary of {expected}")]
    LengthMismatch {
        context: Vec<String>,
        expected: usize,
        got: usize,
    },
    #[error("context {context:?} has an invalid probability {value}")]
    InvalidProbability { context: Vec<String>, value: f64 },
    #[error("distribution for context {context:?} sums to {sum}, not 1")]
    NotNormalized { context: Vec<String>, sum: f64 },
    #[error("reading stub table: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing stub table: {0}")]
    Json(#[from] serde_json::Error),
}

/// One row of a stub table: the distribution used after `context`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubEntry {
    pub context: Vec<String>,
    pub probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StubFile {
    backend_id: String,
    vocabulary: Vec<String>,
    table: Vec<StubEntry>,
}

/// Deterministic backend driven by an explicit table of distributions.
///
/// A query uses the entry for the longest suffix of the context that appears
/// in the table; the empty context must always be present. OOV tokens get
/// probability zero.
#[derive(Debug, Clone)]
pub struct StubBackend {
    backend_id: String,
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    entries: Vec<StubEntry>,
    by_context: HashMap<Vec<String>, usize>,
    window: usize,
}

impl StubBackend {
    pub fn new(
        backend_id: impl Into<String>,
        vocabulary: Vec<String>,
        table: Vec<StubEntry>,
    ) -> Result<Self, StubError> {
        let backend_id = backend_id.into();
        if backend_id.is_empty() {
            return Err(StubError::EmptyBackendId);
        }
        if vocabulary.is_empty() {
            return Err(StubError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (i, tok) in vocabulary.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(StubError::DuplicateToken(tok.clone()));
            }
        }

        let mut by_context = HashMap::with_capacity(table.len());
        let mut window = 0;
        for (i, entry) in table.iter().enumerate() {
            if entry.probs.len() != vocabulary.len() {
                return Err(StubError::LengthMismatch {
                    context: entry.context.clone(),
                    expected: vocabulary.len(),
                    got: entry.probs.len(),
                });
            }
            if let Some(&bad) = entry
                .probs
                .iter()
                .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
            {
                return Err(StubError::InvalidProbability {
                    context: entry.context.clone(),
                    value: bad,
                });
            }
            let sum: f64 = entry.probs.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(StubError::NotNormalized {
                    context: entry.context.clone(),
                    sum,
                });
            }
            if by_context.insert(entry.context.clone(), i).is_some() {
                return Err(StubError::DuplicateContext(entry.context.clone()));
            }
            window = window.max(entry.context.len());
        }
        if !by_context.contains_key(&Vec::new()) {
            return Err(StubError::MissingRoot);
        }

        Ok(Self {
            backend_id,
            vocabulary,
            index,
            entries: table,
            by_context,
            window,
        })
    }

    /// Same distribution after every context.
    pub fn context_free(
        backend_id: impl Into<String>,
        vocabulary: Vec<String>,
        probs: Vec<f64>,
    ) -> Result<Self, StubError> {
        let table = vec![StubEntry {
            context: Vec::new(),
            probs,
        }];
        Self::new(backend_id, vocabulary, table)
    }

    pub fn uniform(
        backend_id: impl Into<String>,
        vocabulary: Vec<String>,
    ) -> Result<Self, StubError> {
        let n = vocabulary.len().max(1);
        let probs = vec![1.0 / n as f64; vocabulary.len()];
        Self::context_free(backend_id, vocabulary, probs)
    }

    pub fn entries(&self) -> &[StubEntry] {
        &self.entries
    }

    /// Table entry consulted after `context`.
    pub fn entry_for(&self, context: &[String]) -> &StubEntry {
        let start = context.len().saturating_sub(self.window);
        let context = &context[start..];
        (0..=context.len())
            .find_map(|skip| self.by_context.get(&context[skip..]))
            .map(|&i| &self.entries[i])
            .expect("empty context is validated at construction")
    }

    pub fn from_json(json: &str) -> Result<Self, StubError> {
        let file: StubFile = serde_json::from_str(json)?;
        Self::new(file.backend_id, file.vocabulary, file.table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StubError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = StubFile {
            backend_id: self.backend_id.clone(),
            vocabulary: self.vocabulary.clone(),
            table: self.entries.clone(),
        };
        serde_json::to_string_pretty(&file).expect("stub table serializes")
    }
}

impl LanguageModel for StubBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn context_window(&self) -> usize {
        self.window
    }

    fn token_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn next_token_distribution(&self, context: &[String]) -> Distribution<'_> {
        let entry = self.entry_for(context);
        Distribution::new(&self.vocabulary, entry.probs.clone(), 0.0)
    }
}
