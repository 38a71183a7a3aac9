use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Distribution, LanguageModel};

/// Interpolation weight toward the higher order at every backoff level.
pub const DEFAULT_SMOOTHING: f64 = 0.9;
pub const DEFAULT_FLOOR_PROB: f64 = 1e-6;

const FORMAT_NAME: &str = "hlscore-ngram";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("training corpus contains no tokens")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("expected {expected} smoothing weights (or one to broadcast), got {got}")]
    SmoothingArity { expected: usize, got: usize },
    #[error("smoothing weight {0} is outside (0, 1]")]
    InvalidSmoothing(f64),
    #[error("floor probability {floor} must lie in (0, {max}] for a vocabulary of {vocab}")]
    InvalidFloor { floor: f64, max: f64, vocab: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("reading model: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing model: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
struct NextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(u32, u64)>,
}

/// Interpolated n-gram model with a reserved OOV floor.
///
/// The conditional probability of an in-vocabulary token is
/// `floor/|V| + (1 - 2*floor) * P_interp(w | ctx)`, and the OOV slot receives
/// `floor`. `P_interp` starts from the unigram MLE and, for each longer
/// context suffix that was observed in training, mixes in that level's MLE
/// with weight `lambda`. Unseen suffixes stop the recursion (full backoff).
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    vocabulary: Vec<String>,
    index: HashMap<String, u32>,
    smoothing: Vec<f64>,
    floor_prob: f64,
    backend_id: String,
    counts: HashMap<Vec<u32>, NextCounts>,
    unigram: Vec<f64>,
}

impl NgramModel {
    /// Train on a corpus of token sequences. N-grams never cross sequence
    /// boundaries.
    ///
    /// `smoothing` holds one weight per backoff level (`order - 1` of them);
    /// a single weight is broadcast and an empty slice selects
    /// [`DEFAULT_SMOOTHING`].
    pub fn train(
        corpus: &[Vec<String>],
        order: usize,
        smoothing: &[f64],
        floor_prob: f64,
    ) -> Result<Self, NgramError> {
        if order < 1 {
            return Err(NgramError::InvalidOrder(order));
        }
        let smoothing = expand_smoothing(smoothing, order)?;

        let vocabulary: Vec<String> = corpus
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if vocabulary.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        check_floor(floor_prob, vocabulary.len())?;
        let index: HashMap<String, u32> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        let mut raw: HashMap<Vec<u32>, HashMap<u32, u64>> = HashMap::new();
        for sequence in corpus {
            let ids: Vec<u32> = sequence.iter().map(|t| index[t]).collect();
            for (i, &next) in ids.iter().enumerate() {
                for len in 0..order.min(i + 1) {
                    *raw.entry(ids[i - len..i].to_vec())
                        .or_default()
                        .entry(next)
                        .or_insert(0) += 1;
                }
            }
        }
        let counts = raw
            .into_iter()
            .map(|(ctx, next)| {
                let mut next: Vec<(u32, u64)> = next.into_iter().collect();
                next.sort_unstable();
                let total = next.iter().map(|&(_, c)| c).sum();
                (ctx, NextCounts { total, next })
            })
            .collect();

        let backend_id = derive_backend_id(corpus, order, &smoothing, floor_prob);
        Ok(Self::assemble(
            order, vocabulary, index, smoothing, floor_prob, backend_id, counts,
        ))
    }

    fn assemble(
        order: usize,
        vocabulary: Vec<String>,
        index: HashMap<String, u32>,
        smoothing: Vec<f64>,
        floor_prob: f64,
        backend_id: String,
        counts: HashMap<Vec<u32>, NextCounts>,
    ) -> Self {
        let mut unigram = vec![0.0; vocabulary.len()];
        if let Some(root) = counts.get(&Vec::new()) {
            for &(id, c) in &root.next {
                unigram[id as usize] = c as f64 / root.total as f64;
            }
        }
        Self {
            order,
            vocabulary,
            index,
            smoothing,
            floor_prob,
            backend_id,
            counts,
            unigram,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> &[f64] {
        &self.smoothing
    }

    pub fn floor_prob(&self) -> f64 {
        self.floor_prob
    }

    /// Count of `next` after exactly `context` in the training data.
    pub fn count(&self, context: &[String], next: &str) -> u64 {
        let (Some(ctx), Some(&id)) = (self.ids(context), self.index.get(next)) else {
            return 0;
        };
        self.counts
            .get(&ctx)
            .and_then(|nc| {
                nc.next
                    .binary_search_by_key(&id, |&(i, _)| i)
                    .ok()
                    .map(|k| nc.next[k].1)
            })
            .unwrap_or(0)
    }

    fn ids(&self, tokens: &[String]) -> Option<Vec<u32>> {
        tokens.iter().map(|t| self.index.get(t).copied()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut counts: Vec<(&Vec<u32>, &NextCounts)> = self.counts.iter().collect();
        counts.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(b.0)));
        let file = ModelFile {
            format: FORMAT_NAME.to_string(),
            v: FORMAT_VERSION,
            backend_id: self.backend_id.clone(),
            order: self.order,
            smoothing: self.smoothing.clone(),
            floor_prob: self.floor_prob,
            vocabulary: self.vocabulary.clone(),
            counts: counts
                .into_iter()
                .map(|(ctx, nc)| CountRow {
                    context: ctx
                        .iter()
                        .map(|&i| self.vocabulary[i as usize].clone())
                        .collect(),
                    next: nc
                        .next
                        .iter()
                        .map(|&(i, c)| (self.vocabulary[i as usize].clone(), c))
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, NgramError> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.format != FORMAT_NAME {
            return Err(NgramError::Format(format!(
                "unexpected format {:?}",
                file.format
            )));
        }
        if file.v != FORMAT_VERSION {
            return Err(NgramError::Format(format!(
                "unsupported version {}",
                file.v
            )));
        }
        if file.order < 1 {
            return Err(NgramError::InvalidOrder(file.order));
        }
        if file.backend_id.is_empty() {
            return Err(NgramError::Format("empty backend_id".into()));
        }
        if file.smoothing.len() != file.order - 1 {
            return Err(NgramError::SmoothingArity {
                expected: file.order - 1,
                got: file.smoothing.len(),
            });
        }
        for &w in &file.smoothing {
            check_weight(w)?;
        }
        if file.vocabulary.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        if file.vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NgramError::Format(
                "vocabulary must be sorted and unique".into(),
            ));
        }
        check_floor(file.floor_prob, file.vocabulary.len())?;

        let index: HashMap<String, u32> = file
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let lookup = |t: &String| {
            index
                .get(t)
                .copied()
                .ok_or_else(|| NgramError::Format(format!("token {t:?} not in vocabulary")))
        };
        let mut counts = HashMap::with_capacity(file.counts.len());
        for row in &file.counts {
            if row.context.len() >= file.order {
                return Err(NgramError::Format(format!(
                    "context {:?} is too long for order {}",
                    row.context, file.order
                )));
            }
            let ctx = row
                .context
                .iter()
                .map(lookup)
                .collect::<Result<Vec<_>, _>>()?;
            let mut next = row
                .next
                .iter()
                .map(|(t, c)| Ok((lookup(t)?, *c)))
                .collect::<Result<Vec<_>, NgramError>>()?;
            next.sort_unstable();
            if next.iter().any(|&(_, c)| c == 0) || next.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(NgramError::Format(format!(
                    "bad counts for context {:?}",
                    row.context
                )));
            }
            let total = next.iter().map(|&(_, c)| c).sum();
            if counts.insert(ctx, NextCounts { total, next }).is_some() {
                return Err(NgramError::Format(format!(
                    "duplicate context {:?}",
                    row.context
                )));
            }
        }
        if !counts.contains_key(&Vec::new()) {
            return Err(NgramError::Format("missing unigram counts".into()));
        }

        Ok(Self::assemble(
            file.order,
            file.vocabulary,
            index,
            file.smoothing,
            file.floor_prob,
            file.backend_id,
            counts,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NgramError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NgramError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl LanguageModel for NgramModel {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn context_window(&self) -> usize {
        self.order - 1
    }

    fn token_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| i as usize)
    }

    fn next_token_distribution(&self, context: &[String]) -> Distribution<'_> {
        let window = self.order - 1;
        let context = &context[context.len().saturating_sub(window)..];

        let mut probs = self.unigram.clone();
        for len in 1..=context.len() {
            let Some(ctx) = self.ids(&context[context.len() - len..]) else {
                break;
            };
            let Some(nc) = self.counts.get(&ctx) else {
                break;
            };
            let lambda = self.smoothing[len - 1];
            for p in probs.iter_mut() {
                *p *= 1.0 - lambda;
            }
            let total = nc.total as f64;
            for &(id, c) in &nc.next {
                probs[id as usize] += lambda * c as f64 / total;
            }
        }

        let base = self.floor_prob / self.vocabulary.len() as f64;
        let scale = 1.0 - 2.0 * self.floor_prob;
        for p in probs.iter_mut() {
            *p = base + scale * *p;
        }
        Distribution::new(&self.vocabulary, probs, self.floor_prob)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    v: u32,
    backend_id: String,
    order: usize,
    smoothing: Vec<f64>,
    floor_prob: f64,
    vocabulary: Vec<String>,
    counts: Vec<CountRow>,
}

#[derive(Serialize, Deserialize)]
struct CountRow {
    context: Vec<String>,
    next: Vec<(String, u64)>,
}

fn check_weight(w: f64) -> Result<(), NgramError> {
    if w > 0.0 && w <= 1.0 {
        Ok(())
    } else {
        Err(NgramError::InvalidSmoothing(w))
    }
}

fn expand_smoothing(smoothing: &[f64], order: usize) -> Result<Vec<f64>, NgramError> {
    let levels = order - 1;
    let weights = match smoothing.len() {
        0 => vec![DEFAULT_SMOOTHING; levels],
        1 => vec![smoothing[0]; levels],
        n if n == levels => smoothing.to_vec(),
        n => {
            return Err(NgramError::SmoothingArity {
                expected: levels,
                got: n,
            })
        }
    };
    for &w in smoothing {
        check_weight(w)?;
    }
    Ok(weights)
}

/// The OOV mass may not exceed the smallest possible top probability,
/// `(1 - floor) / |V|`.
fn check_floor(floor: f64, vocab: usize) -> Result<(), NgramError> {
    let max = 1.0 / (vocab as f64 + 1.0);
    if floor > 0.0 && floor <= max {
        Ok(())
    } else {
        Err(NgramError::InvalidFloor { floor, max, vocab })
    }
}

fn derive_backend_id(
    corpus: &[Vec<String>],
    order: usize,
    smoothing: &[f64],
    floor: f64,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(order.to_le_bytes());
    for w in smoothing {
        hasher.update(w.to_bits().to_le_bytes());
    }
    hasher.update(floor.to_bits().to_le_bytes());
    for sequence in corpus {
        for tok in sequence {
            hasher.update(tok.as_bytes());
            hasher.update([0x1f]);
        }
        hasher.update([0x1e]);
    }
    let digest = hex::encode(hasher.finalize());
    format!("ngram-o{order}-{}", &digest[..12])
}
