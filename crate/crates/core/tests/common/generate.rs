//! Head-of-distribution text generators for the constructed experiments.
//!
//! Both generators start from an empty context, so every emitted position is
//! conditioned exactly as the scorer will later condition it.

use rand::Rng;

use hlscore::lm::LanguageModel;

/// Always emit the tie-broken top token.
pub fn greedy(model: &dyn LanguageModel, len: usize) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::with_capacity(len);
    while tokens.len() < len {
        let start = tokens.len().saturating_sub(model.context_window());
        let dist = model.next_token_distribution(&tokens[start..]);
        let next = dist.vocabulary()[dist.top_index()].clone();
        tokens.push(next);
    }
    tokens
}

/// Sample each token from the `k` most probable vocabulary entries,
/// renormalized. Ties at the cut are resolved lexicographically.
pub fn sample_top_k<R: Rng + ?Sized>(
    model: &dyn LanguageModel,
    k: usize,
    len: usize,
    rng: &mut R,
) -> Vec<String> {
    assert!(k >= 1, "k must be at least 1");
    let mut tokens: Vec<String> = Vec::with_capacity(len);
    while tokens.len() < len {
        let start = tokens.len().saturating_sub(model.context_window());
        let dist = model.next_token_distribution(&tokens[start..]);
        let vocab = dist.vocabulary();
        let probs = dist.probs();
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| {
            probs[b]
                .total_cmp(&probs[a])
                .then_with(|| vocab[a].cmp(&vocab[b]))
        });
        order.truncate(k);
        let mass: f64 = order.iter().map(|&i| probs[i]).sum();
        let mut u = rng.gen::<f64>() * mass;
        let mut pick = order[order.len() - 1];
        for &i in &order {
            if u < probs[i] {
                pick = i;
                break;
            }
            u -= probs[i];
        }
        tokens.push(vocab[pick].clone());
    }
    tokens
}
