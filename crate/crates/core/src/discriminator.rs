//! Threshold classification of Fp scores and threshold calibration.
//!
//! Single mode: `h` when `fp < fp_b`, otherwise `m`.
//! Dual mode: `h` when `fp < fp_l`, `u` when `fp_l <= fp < fp_h`, otherwise `m`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Center of the 0.35 to 0.45 range suggested for the single boundary.
pub const DEFAULT_FP_B: f64 = 0.40;
pub const DEFAULT_K: f64 = 1.0;

/// Calibrated thresholds are kept inside `[EPS, 1 - EPS]`.
const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DiscriminatorError {
    #[error("thresholds are in {actual} mode but {expected} mode was requested")]
    Mode {
        expected: ThresholdMode,
        actual: ThresholdMode,
    },
    #[error("fp {0} is outside [0, 1]")]
    FpOutOfRange(f64),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("calibration needs at least 2 natural and 2 synthetic scores (got {natural} and {synthetic})")]
    InsufficientData { natural: usize, synthetic: usize },
    #[error(
        "natural mean {mu_nat} is not below synthetic mean {mu_syn}; the backend does not separate the two groups"
    )]
    Calibration { mu_nat: f64, mu_syn: f64 },
    #[error("calibration factor k = {0} must be finite and non-negative")]
    InvalidK(f64),
    #[error("reading thresholds: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing thresholds: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Single,
    Dual,
}

impl std::fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdMode::Single => "single",
            ThresholdMode::Dual => "dual",
        })
    }
}

/// Class of a sample, ordered `h < u < m` by increasing Fp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "h")]
    Human,
    #[serde(rename = "u")]
    Unknown,
    #[serde(rename = "m")]
    Machine,
}

impl ClassLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Human => "h",
            ClassLabel::Unknown => "u",
            ClassLabel::Machine => "m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Thresholds {
    Single { fp_b: f64 },
    Dual { fp_l: f64, fp_h: f64 },
}

impl Thresholds {
    pub fn mode(&self) -> ThresholdMode {
        match self {
            Thresholds::Single { .. } => ThresholdMode::Single,
            Thresholds::Dual { .. } => ThresholdMode::Dual,
        }
    }

    fn validate(&self) -> Result<(), DiscriminatorError> {
        let inside = |x: f64| x > 0.0 && x < 1.0;
        match *self {
            Thresholds::Single { fp_b } if !inside(fp_b) => Err(
                DiscriminatorError::InvalidThresholds(format!("fp_b = {fp_b} must lie in (0, 1)")),
            ),
            Thresholds::Dual { fp_l, fp_h } if !(inside(fp_l) && inside(fp_h)) => {
                Err(DiscriminatorError::InvalidThresholds(format!(
                    "fp_l = {fp_l} and fp_h = {fp_h} must lie in (0, 1)"
                )))
            }
            Thresholds::Dual { fp_l, fp_h } if fp_l > fp_h => {
                Err(DiscriminatorError::InvalidThresholds(format!(
                    "fp_l = {fp_l} exceeds fp_h = {fp_h}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub mu_nat: f64,
    pub sigma_nat: f64,
    pub mu_syn: f64,
    pub sigma_syn: f64,
    pub k: f64,
    pub n_nat: usize,
    pub n_syn: usize,
    /// Dual calibration collapsed to the midpoint because `fp_l > fp_h`.
    pub fell_back: bool,
}

#[derive(Serialize, Deserialize)]
struct ThresholdConfigRepr {
    #[serde(flatten)]
    thresholds: Thresholds,
    backend_id: String,
    #[serde(default)]
    calibration_meta: Option<CalibrationMeta>,
}

/// Thresholds bound to the backend whose scores they were chosen for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdConfigRepr", into = "ThresholdConfigRepr")]
pub struct ThresholdConfig {
    thresholds: Thresholds,
    backend_id: String,
    calibration_meta: Option<CalibrationMeta>,
}

impl TryFrom<ThresholdConfigRepr> for ThresholdConfig {
    type Error = DiscriminatorError;

    fn try_from(r: ThresholdConfigRepr) -> Result<Self, Self::Error> {
        let mut config = ThresholdConfig::new(r.thresholds, r.backend_id)?;
        config.calibration_meta = r.calibration_meta;
        Ok(config)
    }
}

impl From<ThresholdConfig> for ThresholdConfigRepr {
    fn from(c: ThresholdConfig) -> Self {
        Self {
            thresholds: c.thresholds,
            backend_id: c.backend_id,
            calibration_meta: c.calibration_meta,
        }
    }
}

impl ThresholdConfig {
    pub fn new(
        thresholds: Thresholds,
        backend_id: impl Into<String>,
    ) -> Result<Self, DiscriminatorError> {
        let backend_id = backend_id.into();
        if backend_id.is_empty() {
            return Err(DiscriminatorError::InvalidThresholds(
                "backend_id must not be empty".into(),
            ));
        }
        thresholds.validate()?;
        Ok(Self {
            thresholds,
            backend_id,
            calibration_meta: None,
        })
    }

    pub fn single(fp_b: f64, backend_id: impl Into<String>) -> Result<Self, DiscriminatorError> {
        Self::new(Thresholds::Single { fp_b }, backend_id)
    }

    pub fn dual(
        fp_l: f64,
        fp_h: f64,
        backend_id: impl Into<String>,
    ) -> Result<Self, DiscriminatorError> {
        Self::new(Thresholds::Dual { fp_l, fp_h }, backend_id)
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn mode(&self) -> ThresholdMode {
        self.thresholds.mode()
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn calibration_meta(&self) -> Option<&CalibrationMeta> {
        self.calibration_meta.as_ref()
    }

    pub fn from_json(json: &str) -> Result<Self, DiscriminatorError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiscriminatorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("thresholds serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiscriminatorError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

fn check_fp(fp: f64) -> Result<(), DiscriminatorError> {
    if (0.0..=1.0).contains(&fp) {
        Ok(())
    } else {
        Err(DiscriminatorError::FpOutOfRange(fp))
    }
}

pub fn classify_single(
    fp: f64,
    config: &ThresholdConfig,
) -> Result<ClassLabel, DiscriminatorError> {
    check_fp(fp)?;
    match config.thresholds {
        Thresholds::Single { fp_b } => Ok(if fp < fp_b {
            ClassLabel::Human
        } else {
            ClassLabel::Machine
        }),
        Thresholds::Dual { .. } => Err(DiscriminatorError::Mode {
            expected: ThresholdMode::Single,
            actual: ThresholdMode::Dual,
        }),
    }
}

pub fn classify_dual(fp: f64, config: &ThresholdConfig) -> Result<ClassLabel, DiscriminatorError> {
    check_fp(fp)?;
    match config.thresholds {
        Thresholds::Dual { fp_l, fp_h } => Ok(if fp < fp_l {
            ClassLabel::Human
        } else if fp < fp_h {
            ClassLabel::Unknown
        } else {
            ClassLabel::Machine
        }),
        Thresholds::Single { .. } => Err(DiscriminatorError::Mode {
            expected: ThresholdMode::Dual,
            actual: ThresholdMode::Single,
        }),
    }
}

/// Classify with whichever scheme `config` carries.
pub fn classify(fp: f64, config: &ThresholdConfig) -> Result<ClassLabel, DiscriminatorError> {
    match config.mode() {
        ThresholdMode::Single => classify_single(fp, config),
        ThresholdMode::Dual => classify_dual(fp, config),
    }
}

/// Arithmetic mean and sample standard deviation (n - 1 denominator).
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Choose thresholds from labeled natural and synthetic Fp populations.
///
/// Single mode places `fp_b` at the midpoint of the two means. Dual mode uses
/// `fp_l = mu_nat + k*sigma_nat` and `fp_h = mu_syn - k*sigma_syn`, collapsing
/// both to the midpoint when the interval would be inverted.
pub fn calibrate(
    natural_fps: &[f64],
    synthetic_fps: &[f64],
    k: f64,
    mode: ThresholdMode,
    backend_id: impl Into<String>,
) -> Result<ThresholdConfig, DiscriminatorError> {
    if natural_fps.len() < 2 || synthetic_fps.len() < 2 {
        return Err(DiscriminatorError::InsufficientData {
            natural: natural_fps.len(),
            synthetic: synthetic_fps.len(),
        });
    }
    if !(k.is_finite() && k >= 0.0) {
        return Err(DiscriminatorError::InvalidK(k));
    }
    if let Some(&bad) = natural_fps
        .iter()
        .chain(synthetic_fps)
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(DiscriminatorError::FpOutOfRange(bad));
    }

    let (mu_nat, sigma_nat) = mean_and_sample_std(natural_fps);
    let (mu_syn, sigma_syn) = mean_and_sample_std(synthetic_fps);
    if mu_nat >= mu_syn {
        return Err(DiscriminatorError::Calibration { mu_nat, mu_syn });
    }
    let midpoint = (mu_nat + mu_syn) / 2.0;
    let clamp = |x: f64| x.clamp(THRESHOLD_EPS, 1.0 - THRESHOLD_EPS);

    let mut fell_back = false;
    let thresholds = match mode {
        ThresholdMode::Single => Thresholds::Single {
            fp_b: clamp(midpoint),
        },
        ThresholdMode::Dual => {
            let fp_l = mu_nat + k * sigma_nat;
            let fp_h = mu_syn - k * sigma_syn;
            if fp_l > fp_h {
                fell_back = true;
                Thresholds::Dual {
                    fp_l: clamp(midpoint),
                    fp_h: clamp(midpoint),
                }
            } else {
                Thresholds::Dual {
                    fp_l: clamp(fp_l),
                    fp_h: clamp(fp_h),
                }
            }
        }
    };

    let mut config = ThresholdConfig::new(thresholds, backend_id)?;
    config.calibration_meta = Some(CalibrationMeta {
        mu_nat,
        sigma_nat,
        mu_syn,
        sigma_syn,
        k,
        n_nat: natural_fps.len(),
        n_syn: synthetic_fps.len(),
        fell_back,
    });
    Ok(config)
}
