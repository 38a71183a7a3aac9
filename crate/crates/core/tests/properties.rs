mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_ranks, mean, oracle_fracs, random_stub};
use hlscore::discriminator::{classify, ClassLabel, ThresholdConfig};
use hlscore::lm::{LanguageModel, NgramModel};
use hlscore::metrics::{correlate_with_human, h_score_dual, h_score_single, ClassCounts};
use hlscore::pipeline::Tokenizer;
use hlscore::scoring::{score_sample, CheckupConfig};

fn corpus_strategy(max_vocab: usize) -> impl Strategy<Value = Vec<Vec<String>>> {
    let token = (0..max_vocab).prop_map(|i| format!("w{i}"));
    prop::collection::vec(prop::collection::vec(token, 1..15), 1..8)
}

fn model_strategy() -> impl Strategy<Value = NgramModel> {
    (
        corpus_strategy(50),
        1usize..=4,
        0.05f64..=1.0,
        1e-9f64..1e-3,
    )
        .prop_filter_map(
            "floor too large for vocabulary",
            |(corpus, order, lambda, floor)| {
                NgramModel::train(&corpus, order, &[lambda], floor).ok()
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ngram_distributions_are_normalized(model in model_strategy(), ctx in prop::collection::vec(0usize..60, 0..6)) {
        let ctx: Vec<String> = ctx.iter().map(|i| format!("w{i}")).collect();
        let d = model.next_token_distribution(&ctx);
        prop_assert!((d.total() - 1.0).abs() < 1e-9);
        prop_assert!(d.probs().iter().all(|&p| p > 0.0 && p <= 1.0));
    }

    #[test]
    fn stats_agree_with_brute_force(model in model_strategy(), seq in prop::collection::vec(0usize..60, 1..12)) {
        let seq: Vec<String> = seq.iter().map(|i| format!("w{i}")).collect();
        let vocab = model.vocabulary().to_vec();
        let first = model.sequence_stats(&seq);
        prop_assert_eq!(&first, &model.sequence_stats(&seq));
        for (i, s) in first.iter().enumerate() {
            let start = i.saturating_sub(model.context_window());
            let d = model.next_token_distribution(&seq[start..i]);
            let probs = d.probs();
            prop_assert!(s.actual_prob <= s.top_prob);
            let max = probs.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(s.top_prob, max);
            let want_rank = match vocab.iter().position(|v| *v == seq[i]) {
                Some(j) => 1 + (0..vocab.len())
                    .filter(|&q| probs[q] > probs[j] || (probs[q] == probs[j] && vocab[q] < vocab[j]))
                    .count(),
                None => vocab.len() + 1,
            };
            prop_assert_eq!(s.rank, want_rank);
            prop_assert!(s.entropy >= 0.0);
            prop_assert!(s.entropy <= ((vocab.len() + 1) as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn fp_is_a_bounded_mean_matching_the_table(seed in any::<u64>(), seq in prop::collection::vec(0usize..12, 1..20)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stub = random_stub(&mut rng, "p", 10);
        let tokens: Vec<String> = seq.iter().map(|i| format!("t{i}")).collect();
        let score = score_sample(&stub, "s", &tokens, &CheckupConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&score.fp));
        let fracs: Vec<f64> = score.token_scores.iter().map(|t| t.frac_p).collect();
        let lo = fracs.iter().cloned().fold(f64::MAX, f64::min);
        let hi = fracs.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(score.fp >= lo - 1e-15 && score.fp <= hi + 1e-15);
        let oracle = mean(&oracle_fracs(stub.vocabulary(), stub.entries(), &tokens));
        prop_assert!((score.fp - oracle).abs() <= 1e-12);
    }

    #[test]
    fn classes_are_monotone_in_fp(a in 0.001f64..0.999, b in 0.001f64..0.999, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (fx, fy) = if x <= y { (x, y) } else { (y, x) };
        for config in [ThresholdConfig::single(a, "m").unwrap(), ThresholdConfig::dual(lo, hi, "m").unwrap()] {
            prop_assert!(classify(fx, &config).unwrap() <= classify(fy, &config).unwrap());
        }
        prop_assert_eq!(classify(hi, &ThresholdConfig::dual(lo, hi, "m").unwrap()).unwrap(), ClassLabel::Machine);
    }

    #[test]
    fn h_score_ignores_order_and_falls_as_fp_rises(
        fps in prop::collection::vec(0.0f64..=1.0, 1..60),
        fp_b in 0.01f64..0.99,
        shift in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let config = ThresholdConfig::single(fp_b, "m").unwrap();
        let h_of = |values: &[f64]| {
            let counts = ClassCounts::from_labels(values.iter().map(|&f| classify(f, &config).unwrap()));
            h_score_single(&counts).unwrap().0
        };
        let base = h_of(&fps);
        let mut shuffled = fps.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(h_of(&shuffled), base);
        let raised: Vec<f64> = fps.iter().map(|f| (f + shift).min(1.0)).collect();
        prop_assert!(h_of(&raised) <= base);
    }

    #[test]
    fn dual_scores_account_for_every_sample(n_h in 0usize..200, n_m in 0usize..200, n_u in 0usize..200) {
        prop_assume!(n_h + n_m + n_u > 0);
        let c = ClassCounts { n_h, n_m, n_u };
        let (h, m) = h_score_dual(&c).unwrap();
        prop_assert!((h + m + n_u as f64 / c.total() as f64 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(pairs in prop::collection::vec((0.0f64..1.0, 1u8..=5), 3..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        prop_assume!(brute_ranks(&x).iter().any(|r| *r != brute_ranks(&x)[0]));
        prop_assume!(y.iter().any(|v| *v != y[0]));
        let base = correlate_with_human(&x, &y).unwrap();
        let warped: Vec<f64> = x.iter().map(|v| (3.0 * v).exp() + v.powi(3)).collect();
        let other = correlate_with_human(&warped, &y).unwrap();
        prop_assert!((base.spearman - other.spearman).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&base.pearson));
    }

    #[test]
    fn greedy_text_scores_exactly_one(seed in any::<u64>(), len in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stub = random_stub(&mut rng, "g", 10);
        let text = common::generate::greedy(&stub, len);
        let score = score_sample(&stub, "g", &text, &CheckupConfig::default()).unwrap();
        prop_assert_eq!(score.fp, 1.0);
        let head = common::generate::sample_top_k(&stub, 1, len, &mut rng);
        prop_assert_eq!(head, text);
    }

    #[test]
    fn tokenizer_is_idempotent(text in "[ a-zA-Z0-9.,;'!?\"()-]{1,80}") {
        if let Ok(tokens) = Tokenizer::LowerPunct.tokenize(&text) {
            let again = Tokenizer::LowerPunct.tokenize(&tokens.join(" ")).unwrap();
            prop_assert_eq!(again, tokens);
        }
    }
}
