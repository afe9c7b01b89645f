//! Standard normal kernels and the closed-form expected-improvement and
//! expected-maximum quantities shared by every policy.
//!
//! All posteriors here are independent Gaussians `N(mean, c² σ² / N)` built
//! from an [`ArmEstimate`] with reward noise `σ` and inflation `c`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use thiserror::Error;

use crate::policies::ArmEstimate;

/// `1 / sqrt(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standardized scores beyond this magnitude are treated as saturated.
pub const Z_SATURATION: f64 = 38.0;

/// Below this score the positive-part mean switches to the continued-fraction
/// form to avoid cancellation between `φ(z)` and `zΦ(z)`.
const Z_CONTINUED_FRACTION: f64 = -4.0;
const CF_DEPTH: usize = 48;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussError {
    #[error("standard deviation must be positive and finite, got {0}")]
    NonPositiveStd(f64),
    #[error("arm has no pulls; the posterior is undefined under the improper prior")]
    ZeroCount,
    #[error("inflation must be finite and >= 1, got {0}")]
    BadInflation(f64),
    #[error("reward std must be positive and finite, got {0}")]
    BadRewardStd(f64),
}

/// Mean and standard deviation of a Gaussian, e.g. of a posterior difference
/// `θ_i − θ_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoment {
    mean: f64,
    std: f64,
}

impl GaussianMoment {
    pub fn new(mean: f64, std: f64) -> Result<Self, GaussError> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(GaussError::NonPositiveStd(std));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Φ(x)` via `erfc`, clamped to exactly 0 or 1 beyond the saturation score.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x > Z_SATURATION {
        1.0
    } else if x < -Z_SATURATION {
        0.0
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}

/// `h(z) = φ(z) + zΦ(z)` for `z <= 0`, i.e. `E[(Z + z)_+]` for standard `Z`.
fn positive_part_unit(z: f64) -> f64 {
    debug_assert!(z <= 0.0);
    if z < -Z_SATURATION {
        return 0.0;
    }
    if z >= Z_CONTINUED_FRACTION {
        return std_normal_pdf(z) + z * std_normal_cdf(z);
    }
    // With x = -z, Φ(-x)/φ(x) = 1/(x + 1/D) for D = x + 2/(x + 3/(x + ...)),
    // which gives h(z) = φ(x) / (x·D + 1) without subtraction.
    let x = -z;
    let mut d = x;
    for k in (2..=CF_DEPTH).rev() {
        d = x + k as f64 / d;
    }
    std_normal_pdf(x) / (x * d + 1.0)
}

/// `E[(X)_+]` for `X ~ N(δ, σ²)`, equal to `σφ(δ/σ) + δΦ(δ/σ)`.
///
/// Positive scores are evaluated as `δ + E[(−X)_+]`, so the result never
/// drops below `max(0, δ)`.
pub fn positive_part_mean(m: GaussianMoment) -> f64 {
    let z = m.mean / m.std;
    if z > Z_SATURATION {
        m.mean
    } else if z > 0.0 {
        m.mean + m.std * positive_part_unit(-z)
    } else {
        m.std * positive_part_unit(z)
    }
}

/// Posterior standard deviation `c σ / sqrt(N)` of one arm.
pub fn posterior_std(arm: &ArmEstimate, inflation: f64, reward_std: f64) -> Result<f64, GaussError> {
    check_scales(inflation, reward_std)?;
    if arm.count == 0 {
        return Err(GaussError::ZeroCount);
    }
    Ok(inflation * reward_std / (arm.count as f64).sqrt())
}

fn check_scales(inflation: f64, reward_std: f64) -> Result<(), GaussError> {
    if !(inflation >= 1.0 && inflation.is_finite()) {
        return Err(GaussError::BadInflation(inflation));
    }
    if !(reward_std > 0.0 && reward_std.is_finite()) {
        return Err(GaussError::BadRewardStd(reward_std));
    }
    Ok(())
}

fn difference_std(i: &ArmEstimate, j: &ArmEstimate, inflation: f64, reward_std: f64) -> Result<f64, GaussError> {
    check_scales(inflation, reward_std)?;
    if i.count == 0 || j.count == 0 {
        return Err(GaussError::ZeroCount);
    }
    let var = 1.0 / i.count as f64 + 1.0 / j.count as f64;
    Ok(inflation * reward_std * var.sqrt())
}

/// Pairwise expected improvement `E[(θ_i − θ_j)_+]` between two independent
/// arm posteriors.
pub fn gap_ei(i: &ArmEstimate, j: &ArmEstimate, inflation: f64, reward_std: f64) -> Result<f64, GaussError> {
    let std = difference_std(i, j, inflation, reward_std)?;
    let moment = GaussianMoment::new(i.mean - j.mean, std)?;
    Ok(positive_part_mean(moment))
}

/// `E[max(θ_i, θ_j)] = μ_iΦ(z) + μ_jΦ(−z) + sφ(z)` with `z = (μ_i − μ_j)/s`.
///
/// The pair is put in a canonical order first, so swapping the arguments
/// yields the bit-identical value.
pub fn pairwise_max_entry(
    i: &ArmEstimate,
    j: &ArmEstimate,
    inflation: f64,
    reward_std: f64,
) -> Result<f64, GaussError> {
    let s = difference_std(i, j, inflation, reward_std)?;
    let (hi, lo) = if i.mean >= j.mean { (i.mean, j.mean) } else { (j.mean, i.mean) };
    let z = (hi - lo) / s;
    if z > Z_SATURATION {
        return Ok(hi);
    }
    // hi + E[(θ_lo − θ_hi)_+]; equal to the three-term form without its
    // cancellation at large z
    Ok(hi + s * positive_part_unit(-z))
}

/// Expected maximum of two iid standard normals, `1/sqrt(π)`.
pub fn expected_max_iid_unit() -> f64 {
    1.0 / PI.sqrt()
}
