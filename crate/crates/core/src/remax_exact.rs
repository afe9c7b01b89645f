//! Exact ReMax policy for two virtual draws.
//!
//! With `M = 2` the objective is the quadratic form `πᵀGπ` over the simplex,
//! where `G` holds pairwise expected maxima off the diagonal and the arm
//! means on it. The maximizer is found by a primal-dual active-set loop that
//! re-solves the bordered KKT system `[[G_AA, −1], [1ᵀ, 0]]` until both the
//! primal (`π ≥ 0`) and dual (`(Gπ)_i ≤ λ` off the support) conditions hold.

use thiserror::Error;

use crate::gauss::{self, GaussError};
use crate::linalg;
use crate::policies::ArmEstimate;

/// Default dual tolerance used inside the policy loop.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Weights in `(−CLEANUP_DUST, 0)` are treated as floating-point dust.
const CLEANUP_DUST: f64 = 1e-12;
const JITTER_LEVELS: [f64; 4] = [0.0, 1e-12, 1e-11, 1e-10];
const SINGULAR_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("active-set loop hit the iteration cap after {} iterations", .certificate.iterations)]
    IterationLimit { policy: ProbabilityVector, certificate: KktCertificate },
    #[error("KKT system singular at column {column} after jitter retries")]
    Singular { column: usize },
    #[error("matrix is not a valid pairwise-max matrix: {0}")]
    InvalidMatrix(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("weights must be non-empty")]
    Empty,
    #[error("weight {index} is negative or not finite: {value}")]
    BadWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, not 1")]
    NotNormalized(f64),
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Tolerance on `|Σw − 1|` accepted by [`ProbabilityVector::new`].
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self, SimplexError> {
        if weights.is_empty() {
            return Err(SimplexError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(SimplexError::BadWeight { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL * weights.len().max(1) as f64 {
            return Err(SimplexError::NotNormalized(sum));
        }
        Ok(Self(weights))
    }

    /// Clamps negative entries to zero and rescales to unit mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self, SimplexError> {
        for w in weights.iter_mut() {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(SimplexError::NotNormalized(sum));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Self::new(weights)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn vertex(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Self(w)
    }

    /// Numerically stable softmax of a logit vector.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= sum);
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] > 0.0).collect()
    }

    /// Inverse-CDF draw in index order from a uniform variate `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let mut cum = 0.0;
        let mut last = 0;
        for (i, &w) in self.0.iter().enumerate() {
            if w > 0.0 {
                cum += w;
                last = i;
                if u < cum {
                    return i;
                }
            }
        }
        last
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Symmetric `K × K` matrix of pairwise expected maxima with `G_ii = μ̂_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMaxMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl PairwiseMaxMatrix {
    /// Wraps raw row-major entries, checking size, finiteness and symmetry.
    pub fn from_entries(k: usize, entries: Vec<f64>) -> Result<Self, SolveError> {
        if k == 0 || entries.len() != k * k {
            return Err(SolveError::DimensionMismatch { expected: k * k, got: entries.len() });
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(SolveError::InvalidMatrix(format!("non-finite entry {bad}")));
        }
        for i in 0..k {
            for j in i + 1..k {
                if entries[i * k + j] != entries[j * k + i] {
                    return Err(SolveError::InvalidMatrix(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { k, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.entries.chunks_exact(self.k).map(|row| dot(row, x)).collect()
    }
}

/// Primal-dual certificate of the returned solution.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    /// Common value `λ` of `(Gπ)_i` over the active set.
    pub multiplier: f64,
    /// `max_{i∈A} |(Gπ)_i − λ|`.
    pub stationarity_gap: f64,
    /// `max_{i∉A} (Gπ)_i − λ`; negative when every inactive arm is strictly worse.
    pub max_dual_violation: f64,
    /// `max(−min_i π_i, |Σπ − 1|)`.
    pub max_primal_violation: f64,
    pub iterations: usize,
    pub active: Vec<usize>,
}

impl KktCertificate {
    pub fn accepts(&self, tol: f64) -> bool {
        self.stationarity_gap <= tol && self.max_dual_violation <= tol && self.max_primal_violation <= tol
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds `G` from per-arm estimates; every arm needs at least one pull.
pub fn build_pairwise_matrix(
    estimates: &[ArmEstimate],
    inflation: f64,
    reward_std: f64,
) -> Result<PairwiseMaxMatrix, GaussError> {
    let k = estimates.len();
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        // validates count and scales even when k == 1
        gauss::posterior_std(&estimates[i], inflation, reward_std)?;
        entries[i * k + i] = estimates[i].mean;
        for j in i + 1..k {
            let v = gauss::pairwise_max_entry(&estimates[i], &estimates[j], inflation, reward_std)?;
            entries[i * k + j] = v;
            entries[j * k + i] = v;
        }
    }
    Ok(PairwiseMaxMatrix { k, entries })
}

/// `πᵀGπ`.
pub fn remax_objective(pi: &ProbabilityVector, g: &PairwiseMaxMatrix) -> Result<f64, SolveError> {
    if pi.len() != g.k {
        return Err(SolveError::DimensionMismatch { expected: g.k, got: pi.len() });
    }
    let w = pi.weights();
    Ok(dot(w, &g.mul_vec(w)))
}

/// Posterior-averaged marginal improvements `s̄_i = Σ_j π_j E[(θ_i − θ_j)_+]`.
pub fn ei_vector(
    pi: &ProbabilityVector,
    estimates: &[ArmEstimate],
    inflation: f64,
    reward_std: f64,
) -> Result<Vec<f64>, GaussError> {
    let w = pi.weights();
    let k = estimates.len();
    assert_eq!(w.len(), k, "policy and estimates must have the same arm count");
    let mut out = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            if i != j && w[j] > 0.0 {
                out[i] += w[j] * gauss::gap_ei(&estimates[i], &estimates[j], inflation, reward_std)?;
            }
        }
    }
    Ok(out)
}

/// Solves the equality-constrained KKT system restricted to `active`,
/// writing `π` (zero off the active set) and returning `λ`.
fn solve_restricted(
    shifted: &[f64],
    k: usize,
    active: &[usize],
    scale: f64,
    pi: &mut [f64],
) -> Result<f64, SolveError> {
    let n = active.len();
    let dim = n + 1;
    let mut last_col = 0;
    for jitter in JITTER_LEVELS {
        let mut a = vec![0.0; dim * dim];
        let mut b = vec![0.0; dim];
        for (r, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                a[r * dim + c] = shifted[i * k + j];
            }
            a[r * dim + r] -= jitter * scale;
            a[r * dim + n] = -1.0;
            a[n * dim + r] = 1.0;
        }
        b[n] = 1.0;
        match linalg::solve_in_place(&mut a, &mut b, SINGULAR_REL * scale.max(1.0)) {
            Ok(()) => {
                pi.iter_mut().for_each(|p| *p = 0.0);
                for (r, &i) in active.iter().enumerate() {
                    pi[i] = b[r];
                }
                return Ok(b[n]);
            }
            Err(s) => last_col = s.column,
        }
    }
    Err(SolveError::Singular { column: last_col })
}

/// Maximizes `πᵀGπ` over the simplex by the primal-dual active-set method.
///
/// Starts from all arms active and applies the simultaneous update
/// `A ← {i ∈ A : π_i ≥ 0} ∪ {i ∉ A : (Gπ)_i > λ + tol}` until neither
/// condition fires. The loop is capped at `50·K` updates; hitting the cap
/// returns [`SolveError::IterationLimit`] carrying the clamped iterate.
pub fn solve_active_set(g: &PairwiseMaxMatrix, tol: f64) -> Result<(ProbabilityVector, KktCertificate), SolveError> {
    if !(tol > 0.0) {
        return Err(SolveError::BadTolerance(tol));
    }
    let k = g.k;
    // Subtracting a constant from every entry leaves the argmax unchanged
    // on the simplex and shifts λ by the same constant.
    let shift = (0..k).map(|i| g.get(i, i)).sum::<f64>() / k as f64;
    let shifted: Vec<f64> = g.entries.iter().map(|v| v - shift).collect();
    let scale = g.entries.iter().chain(&shifted).fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let mut is_active = vec![true; k];
    let mut active: Vec<usize> = (0..k).collect();
    let mut pi = vec![0.0; k];
    let mut lambda = solve_restricted(&shifted, k, &active, scale, &mut pi)?;
    let cap = 50 * k;
    let mut iterations = 0;
    let mut gp = vec![0.0; k];
    loop {
        matvec_support(&shifted, k, &active, &pi, &mut gp);
        let primal_bad = active.iter().any(|&i| pi[i] < 0.0);
        let dual_bad = (0..k).any(|i| !is_active[i] && gp[i] > lambda + tol);
        if !primal_bad && !dual_bad {
            break;
        }
        if iterations >= cap {
            let policy = ProbabilityVector::normalized(pi.clone()).unwrap_or_else(|_| ProbabilityVector::uniform(k));
            let certificate = certify(&shifted, k, &policy, shift, iterations);
            return Err(SolveError::IterationLimit { policy, certificate });
        }
        let next: Vec<bool> = (0..k).map(|i| if is_active[i] { pi[i] >= 0.0 } else { gp[i] > lambda + tol }).collect();
        is_active = next;
        active = (0..k).filter(|&i| is_active[i]).collect();
        if active.is_empty() {
            // unreachable for a consistent solve since Σπ_A = 1
            let best = (0..k).fold(0, |b, i| if g.get(i, i) > g.get(b, b) { i } else { b });
            is_active[best] = true;
            active.push(best);
        }
        lambda = solve_restricted(&shifted, k, &active, scale, &mut pi)?;
        iterations += 1;
    }
    for p in pi.iter_mut() {
        if *p < 0.0 && *p > -CLEANUP_DUST {
            *p = 0.0;
        }
    }
    let policy = ProbabilityVector::normalized(pi).map_err(|e| SolveError::InvalidMatrix(e.to_string()))?;
    let mut certificate = certify(&shifted, k, &policy, shift, iterations);
    certificate.active = active;
    certificate.stationarity_gap = stationarity(&shifted, k, &policy, &certificate.active, lambda);
    certificate.max_dual_violation = dual_violation(&shifted, k, &policy, &is_active, lambda);
    certificate.multiplier = lambda + shift;
    Ok((policy, certificate))
}

fn matvec_support(shifted: &[f64], k: usize, support: &[usize], pi: &[f64], out: &mut [f64]) {
    for i in 0..k {
        let row = &shifted[i * k..(i + 1) * k];
        out[i] = support.iter().map(|&j| row[j] * pi[j]).sum();
    }
}

fn stationarity(shifted: &[f64], k: usize, pi: &ProbabilityVector, active: &[usize], lambda: f64) -> f64 {
    let w = pi.weights();
    active.iter().map(|&i| (dot(&shifted[i * k..(i + 1) * k], w) - lambda).abs()).fold(0.0, f64::max)
}

fn dual_violation(shifted: &[f64], k: usize, pi: &ProbabilityVector, is_active: &[bool], lambda: f64) -> f64 {
    let w = pi.weights();
    (0..k)
        .filter(|&i| !is_active[i])
        .map(|i| dot(&shifted[i * k..(i + 1) * k], w) - lambda)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Certificate with the support taken as the active set and `λ` as the
/// support average of `(Gπ)_i`; used when no solved multiplier is at hand.
fn certify(shifted: &[f64], k: usize, pi: &ProbabilityVector, shift: f64, iterations: usize) -> KktCertificate {
    let w = pi.weights();
    let support = pi.support();
    let gp: Vec<f64> = (0..k).map(|i| dot(&shifted[i * k..(i + 1) * k], w)).collect();
    let lambda = support.iter().map(|&i| gp[i]).sum::<f64>() / support.len().max(1) as f64;
    let is_active: Vec<bool> = (0..k).map(|i| w[i] > 0.0).collect();
    let min_w = w.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = w.iter().sum();
    KktCertificate {
        multiplier: lambda + shift,
        stationarity_gap: stationarity(shifted, k, pi, &support, lambda),
        max_dual_violation: dual_violation(shifted, k, pi, &is_active, lambda),
        max_primal_violation: (-min_w).max((sum - 1.0).abs()).max(0.0),
        iterations,
        active: support,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn est(count: u64, mean: f64) -> ArmEstimate {
        ArmEstimate { count, mean }
    }

    #[test]
    fn two_identical_arms_matrix() {
        let g = build_pairwise_matrix(&[est(1, 0.0), est(1, 0.0)], 1.0, 1.0).unwrap();
        assert_eq!(g.get(0, 0), 0.0);
        assert_eq!(g.get(1, 1), 0.0);
        assert_abs_diff_eq!(g.get(0, 1), 1.0 / std::f64::consts::PI.sqrt(), epsilon = 1e-15);
        assert_eq!(g.get(0, 1), g.get(1, 0));
    }

    #[test]
    fn single_arm_matrix_and_solution() {
        let g = build_pairwise_matrix(&[est(3, 0.7)], 1.0, 1.0).unwrap();
        assert_eq!(g.entries(), &[0.7]);
        let (pi, cert) = solve_active_set(&g, DEFAULT_TOL).unwrap();
        assert_eq!(pi.weights(), &[1.0]);
        assert_abs_diff_eq!(cert.multiplier, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(build_pairwise_matrix(&[est(1, 0.0), est(0, 0.0)], 1.0, 1.0).is_err());
        assert!(build_pairwise_matrix(&[est(0, 0.0)], 1.0, 1.0).is_err());
    }

    #[test]
    fn diagonal_strictly_below_row() {
        let g = build_pairwise_matrix(&[est(2, 0.1), est(5, 0.4), est(9, -0.3)], 1.0, 0.5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(g.get(i, i) < g.get(i, j));
                }
            }
        }
    }

    #[test]
    fn objective_expansions() {
        let g = PairwiseMaxMatrix::from_entries(2, vec![0.3, 0.9, 0.9, -0.2]).unwrap();
        assert_eq!(remax_objective(&ProbabilityVector::vertex(2, 0), &g).unwrap(), 0.3);
        let half = ProbabilityVector::uniform(2);
        assert_abs_diff_eq!(remax_objective(&half, &g).unwrap(), 0.25 * 0.3 + 0.25 * -0.2 + 0.5 * 0.9, epsilon = 1e-15);
        assert!(remax_objective(&ProbabilityVector::uniform(3), &g).is_err());
    }

    #[test]
    fn objective_matches_enumeration_zero_variance() {
        // θ = (1, 0) deterministic: G_ij = max(θ_i, θ_j), G_ii = θ_i.
        let g = PairwiseMaxMatrix::from_entries(2, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let pi = ProbabilityVector::uniform(2);
        let theta = [1.0, 0.0];
        let mut enumerated = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                enumerated += 0.25 * f64::max(theta[a], theta[b]);
            }
        }
        assert_eq!(enumerated, 0.75);
        assert_abs_diff_eq!(remax_objective(&pi, &g).unwrap(), enumerated, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_two_arms_split_evenly() {
        let g = build_pairwise_matrix(&[est(4, 0.2), est(4, 0.2)], 1.0, 1.0).unwrap();
        let (pi, cert) = solve_active_set(&g, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(pi.weights()[0], 0.5, epsilon = 1e-12);
        assert!(cert.accepts(1e-10));
    }

    #[test]
    fn two_arm_ratio_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..200 {
            let a = est(rng.random_range(1..50), rng.random_range(-1.0..1.0));
            let b = est(rng.random_range(1..50), rng.random_range(-1.0..1.0));
            let sd = rng.random_range(0.1..1.0);
            let g = build_pairwise_matrix(&[a, b], 1.0, sd).unwrap();
            let (pi, _) = solve_active_set(&g, DEFAULT_TOL).unwrap();
            let w = pi.weights();
            let g12 = gauss::gap_ei(&a, &b, 1.0, sd).unwrap();
            let g21 = gauss::gap_ei(&b, &a, 1.0, sd).unwrap();
            if g12.min(g21) < 1e-6 * g12.max(g21) {
                continue;
            }
            checked += 1;
            assert!(((w[1] / w[0]) / (g21 / g12) - 1.0).abs() < 1e-8);
        }
        assert!(checked >= 100, "{checked}");
    }

    #[test]
    fn three_arm_grid_oracle() {
        let arms = [est(1, 0.05), est(1, 0.02), est(1, 0.01)];
        let g = build_pairwise_matrix(&arms, 1.0, 0.02).unwrap();
        let (pi, _) = solve_active_set(&g, DEFAULT_TOL).unwrap();
        let solved = remax_objective(&pi, &g).unwrap();
        let steps = 1000;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let w = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                let mut v = 0.0;
                for r in 0..3 {
                    for c in 0..3 {
                        v += w[r] * w[c] * g.get(r, c);
                    }
                }
                best = best.max(v);
            }
        }
        assert!(solved >= best - 1e-12);
        assert!((solved - best).abs() <= 1e-6);
    }

    #[test]
    fn drops_dominated_arm() {
        // arm 2 is far below with a tight posterior and must leave the support
        let arms = [est(50, 1.0), est(50, 0.95), est(10_000, -5.0)];
        let g = build_pairwise_matrix(&arms, 1.0, 0.3).unwrap();
        let (pi, cert) = solve_active_set(&g, DEFAULT_TOL).unwrap();
        assert_eq!(pi.weights()[2], 0.0);
        assert!(cert.iterations >= 1);
        assert!(cert.accepts(1e-10));
        assert!(cert.max_dual_violation < 0.0);
    }

    #[test]
    fn degenerate_zero_variance_twins_are_resolved() {
        // identical rows; only the jitter retry makes the system solvable
        let g = PairwiseMaxMatrix::from_entries(2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let (pi, _) = solve_active_set(&g, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(pi.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ei_vector_point_mass_and_symmetry() {
        let arms = [est(3, 0.1), est(8, 0.4), est(2, -0.2)];
        let s = ei_vector(&ProbabilityVector::vertex(3, 1), &arms, 1.0, 1.0).unwrap();
        assert_eq!(s[1], 0.0);
        assert_abs_diff_eq!(s[0], gauss::gap_ei(&arms[0], &arms[1], 1.0, 1.0).unwrap(), epsilon = 1e-16);
        assert_abs_diff_eq!(s[2], gauss::gap_ei(&arms[2], &arms[1], 1.0, 1.0).unwrap(), epsilon = 1e-16);
        let twins = [est(5, 0.3); 4];
        let s = ei_vector(&ProbabilityVector::uniform(4), &twins, 1.0, 1.0).unwrap();
        assert!(s.iter().all(|v| (v - s[0]).abs() < 1e-15));
    }

    #[test]
    fn simplex_sampling_and_validation() {
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        let p = ProbabilityVector::new(vec![0.2, 0.0, 0.8]).unwrap();
        assert_eq!(p.sample(0.0), 0);
        assert_eq!(p.sample(0.1999), 0);
        assert_eq!(p.sample(0.2), 2);
        assert_eq!(p.sample(0.9999999), 2);
        assert_eq!(p.support(), vec![0, 2]);
    }
}
