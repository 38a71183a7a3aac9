//! Human-likeliness scoring for generated text.
//!
//! Every token of a sample is scored by how close its probability comes to
//! the most probable token at that position (`frac(p)`). The per-sample mean,
//! `fp`, is thresholded into human-like (`h`), machine-like (`m`) or, with two
//! thresholds, unknown (`u`). Corpus-level h/m scores summarize a generation
//! method.
//!
//! ```
//! use hlscore::discriminator::{classify, ClassLabel, ThresholdConfig};
//! use hlscore::lm::StubBackend;
//! use hlscore::scoring::{score_sample, CheckupConfig};
//!
//! let vocab: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
//! let stub = StubBackend::context_free("demo", vocab, vec![0.5, 0.3, 0.2]).unwrap();
//! let tokens: Vec<String> = vec!["b".into(), "c".into()];
//! let score = score_sample(&stub, "s1", &tokens, &CheckupConfig::default()).unwrap();
//! assert!((score.fp - 0.5).abs() < 1e-12);
//!
//! let thresholds = ThresholdConfig::single(0.4, "demo").unwrap();
//! assert_eq!(classify(score.fp, &thresholds).unwrap(), ClassLabel::Machine);
//! ```

pub mod discriminator;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod remote;
pub mod scoring;
