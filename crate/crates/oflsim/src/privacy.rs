//! Noise calibration, the deterministic Gaussian sampler, and the
//! sensitivity checker.
//!
//! Two exact closed forms are implemented, both with natural logarithms:
//!
//! - correlated mechanism: `V^2 = 4 gamma^2 Bg^2 (2 ln(1/delta) + eps) / eps^2`
//! - independent zCDP baseline: `rho = (sqrt(eps + ln(1/delta)) - sqrt(ln(1/delta)))^2`
//!   and `V^2 = 2 Bg^2 / rho`
//!
//! `V^2` is per coordinate: a noise row in `R^d` has expected squared norm
//! `d V^2`.

use ndarray::{Array2, ArrayView2};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathx;

/// Slack added to the sensitivity bound before comparing.
pub const SENSITIVITY_SLACK: f64 = 1e-9;

/// An (epsilon, delta) differential privacy budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let b = PrivacyBudget { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMechanism {
    CorrelatedMf,
    IndependentZcdp,
    None,
}

impl NoiseMechanism {
    pub fn tag(&self) -> &'static str {
        match self {
            NoiseMechanism::CorrelatedMf => "correlated_mf",
            NoiseMechanism::IndependentZcdp => "independent_zcdp",
            NoiseMechanism::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "correlated_mf" => Ok(NoiseMechanism::CorrelatedMf),
            "independent_zcdp" => Ok(NoiseMechanism::IndependentZcdp),
            "none" => Ok(NoiseMechanism::None),
            other => Err(Error::InvalidParameter(format!(
                "unknown mechanism `{other}`"
            ))),
        }
    }
}

/// A calibrated per-coordinate Gaussian noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// Per-coordinate variance V^2.
    pub variance: f64,
    /// V = sqrt(V^2).
    pub std: f64,
    pub mechanism: NoiseMechanism,
    pub clip_bound: f64,
    pub gamma: f64,
}

impl NoiseCalibration {
    /// Multiplies the standard deviation by `scale` (variance by `scale^2`).
    /// Used by the sensitivity-scale override.
    pub fn scaled(&self, scale: f64) -> NoiseCalibration {
        NoiseCalibration {
            variance: self.variance * scale * scale,
            std: self.std * scale,
            ..*self
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// Noise variance for the correlated mechanism:
/// `V^2 = 4 gamma^2 Bg^2 (2 ln(1/delta) + eps) / eps^2`.
pub fn calibrate_correlated(
    budget: PrivacyBudget,
    clip_bound: f64,
    gamma: f64,
) -> Result<NoiseCalibration> {
    budget.validate()?;
    check_positive("clip_bound", clip_bound)?;
    check_positive("gamma", gamma)?;
    let log_term = mathx::ln(1.0 / budget.delta);
    let variance =
        4.0 * gamma * gamma * clip_bound * clip_bound * (2.0 * log_term + budget.epsilon)
            / (budget.epsilon * budget.epsilon);
    Ok(NoiseCalibration {
        variance,
        std: variance.sqrt(),
        mechanism: NoiseMechanism::CorrelatedMf,
        clip_bound,
        gamma,
    })
}

/// zCDP parameter of the independent baseline:
/// `rho = (sqrt(eps + ln(1/delta)) - sqrt(ln(1/delta)))^2`.
pub fn zcdp_rho(budget: PrivacyBudget) -> Result<f64> {
    budget.validate()?;
    let log_term = mathx::ln(1.0 / budget.delta);
    let diff = (budget.epsilon + log_term).sqrt() - log_term.sqrt();
    Ok(diff * diff)
}

/// Noise variance for the independent baseline: `V^2 = 2 Bg^2 / rho`.
pub fn calibrate_independent_zcdp(
    budget: PrivacyBudget,
    clip_bound: f64,
) -> Result<NoiseCalibration> {
    check_positive("clip_bound", clip_bound)?;
    let rho = zcdp_rho(budget)?;
    let variance = 2.0 * clip_bound * clip_bound / rho;
    Ok(NoiseCalibration {
        variance,
        std: variance.sqrt(),
        mechanism: NoiseMechanism::IndependentZcdp,
        clip_bound,
        gamma: 1.0,
    })
}

/// The noise-free calibration (mechanism `none`, variance 0).
pub fn zero_calibration(clip_bound: f64) -> NoiseCalibration {
    NoiseCalibration {
        variance: 0.0,
        std: 0.0,
        mechanism: NoiseMechanism::None,
        clip_bound,
        gamma: 1.0,
    }
}

/// Deterministic standard-normal stream (`noise-stream-v1`).
///
/// Generator: ChaCha8 keyed via `seed_from_u64`. Uniforms take the top 53
/// bits of each 64-bit word, giving `u in [0, 1)`. Each normal consumes two
/// uniforms through the Box-Muller cosine branch:
/// `z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
/// Transcendentals come from `libm`, so the stream is bit-identical across
/// platforms for a given seed.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * mathx::ln(1.0 - u1)).sqrt() * mathx::cos(std::f64::consts::TAU * u2)
    }
}

/// Samples an `rounds x dim` matrix of iid `N(0, V^2)` entries, filled in
/// row-major order from the stream keyed by `seed`. Zero variance returns an
/// all-zero matrix without consuming randomness.
pub fn sample_noise_matrix(
    rounds: usize,
    dim: usize,
    calib: &NoiseCalibration,
    seed: u64,
) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((rounds, dim));
    if calib.variance == 0.0 {
        return out;
    }
    let mut stream = GaussianStream::new(seed);
    for v in out.iter_mut() {
        *v = calib.std * stream.standard_normal();
    }
    out
}

/// Outcome of the sensitivity-bound check on a neighboring pair.
#[derive(Debug, Clone)]
pub struct SensitivityCheck {
    /// `||C (G - G')||_F`.
    pub lhs: f64,
    /// `2 gamma Bg`.
    pub bound: f64,
    pub ok: bool,
    /// Indices of rows where `G` and `G'` differ.
    pub changed_rows: Vec<usize>,
    /// `lhs / bound`; exposes how conservative the bound is in practice.
    pub ratio: f64,
}

/// Checks `||C (G - G')||_F <= 2 gamma Bg` for gradient stacks from
/// neighboring executions, and records which rows actually changed.
pub fn check_sensitivity(
    c_matrix: ArrayView2<f64>,
    g: ArrayView2<f64>,
    g_prime: ArrayView2<f64>,
    clip_bound: f64,
    gamma: f64,
) -> Result<SensitivityCheck> {
    if g.raw_dim() != g_prime.raw_dim() {
        return Err(Error::ShapeMismatch(format!(
            "gradient stacks differ in shape: {:?} vs {:?}",
            g.raw_dim(),
            g_prime.raw_dim()
        )));
    }
    if c_matrix.ncols() != g.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "C has {} columns but G has {} rows",
            c_matrix.ncols(),
            g.nrows()
        )));
    }
    let diff = &g - &g_prime;
    let mut changed_rows = Vec::new();
    for (r, row) in diff.rows().into_iter().enumerate() {
        if row.iter().any(|v| *v != 0.0) {
            changed_rows.push(r);
        }
    }
    let projected = c_matrix.dot(&diff);
    let lhs = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bound = 2.0 * gamma * clip_bound;
    Ok(SensitivityCheck {
        lhs,
        bound,
        ok: lhs <= bound + SENSITIVITY_SLACK,
        changed_rows,
        ratio: lhs / bound,
    })
}
