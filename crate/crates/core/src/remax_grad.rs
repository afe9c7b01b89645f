//! Sample-average ReMax objective for any number of virtual draws `M`, and
//! its maximization by Adam ascent on softmax logits.
//!
//! For one posterior sample `θ` with arms ranked by decreasing value, the
//! expected best of `M` iid draws from `π` (repeats reuse the same value) is
//!
//! ```text
//! Σ_r θ_(r) [ (1 − Σ_{j<r} π_(j))^M − (1 − Σ_{j≤r} π_(j))^M ]
//! ```
//!
//! and its policy gradient telescopes into
//! `g_(r) = Σ_{r'≥r} M (θ_(r') − θ_(r'+1)) (1 − Σ_{j≤r'} π_(j))^{M−1}`,
//! where the `r' = K` term vanishes.

use thiserror::Error;

use crate::remax_exact::ProbabilityVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("number of virtual draws must be >= 2, got {0}")]
    TooFewDraws(u32),
    #[error("dimension mismatch: expected {expected} arms, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("policy is not on the simplex (sum {0})")]
    NotSimplex(f64),
    #[error("sample matrix must have at least one row")]
    NoSamples,
    #[error("invalid gradient config: {0}")]
    BadConfig(&'static str),
}

/// Settings of the inner gradient loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradConfig {
    /// Virtual draws `M`.
    pub m: u32,
    /// Posterior samples per round `S`.
    pub samples: usize,
    /// Maximum Adam steps per round `L`.
    pub max_steps: usize,
    pub learning_rate: f64,
    /// Early-stop threshold on the simplex KKT gap.
    pub kkt_tol: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for GradConfig {
    fn default() -> Self {
        Self {
            m: 2,
            samples: 50,
            max_steps: 20,
            learning_rate: 0.05,
            kkt_tol: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl GradConfig {
    pub fn with_m(m: u32) -> Self {
        Self { m, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GradError> {
        if self.m < 2 {
            return Err(GradError::TooFewDraws(self.m));
        }
        if self.samples == 0 {
            return Err(GradError::BadConfig("samples must be >= 1"));
        }
        if self.max_steps == 0 {
            return Err(GradError::BadConfig("max_steps must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(GradError::BadConfig("learning rate and KKT tolerance must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(GradError::BadConfig("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Softmax logits plus Adam moments. Logits carry over between rounds, the
/// moments are zeroed at the start of every round.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitState {
    pub logits: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: usize,
}

impl LogitState {
    /// Zero logits, i.e. the uniform policy.
    pub fn new(k: usize) -> Self {
        Self { logits: vec![0.0; k], adam_m: vec![0.0; k], adam_v: vec![0.0; k], step_count: 0 }
    }

    pub fn policy(&self) -> ProbabilityVector {
        ProbabilityVector::softmax(&self.logits)
    }

    fn reset_moments(&mut self) {
        self.adam_m.iter_mut().for_each(|v| *v = 0.0);
        self.adam_v.iter_mut().for_each(|v| *v = 0.0);
        self.step_count = 0;
    }
}

/// `S × K` posterior draws, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    k: usize,
    data: Vec<f64>,
}

impl PosteriorSamples {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self, GradError> {
        if k == 0 || data.is_empty() || data.len() % k != 0 {
            return Err(GradError::NoSamples);
        }
        Ok(Self { k, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GradError> {
        let k = rows.first().map(Vec::len).ok_or(GradError::NoSamples)?;
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(GradError::DimensionMismatch { expected: k, got: r.len() });
        }
        Self::new(k, rows.concat())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.k..(s + 1) * self.k]
    }
}

/// Samples with each row's arms pre-sorted by `(θ desc, index asc)`.
struct RankedSamples {
    k: usize,
    order: Vec<usize>,
    values: Vec<f64>,
}

impl RankedSamples {
    fn new(samples: &PosteriorSamples) -> Self {
        let k = samples.k;
        let mut order = Vec::with_capacity(samples.data.len());
        let mut values = Vec::with_capacity(samples.data.len());
        let mut idx: Vec<usize> = (0..k).collect();
        for s in 0..samples.len() {
            let row = samples.row(s);
            idx.iter_mut().enumerate().for_each(|(i, v)| *v = i);
            // stable sort keeps ascending index among equal values
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            order.extend_from_slice(&idx);
            values.extend(idx.iter().map(|&i| row[i]));
        }
        Self { k, order, values }
    }

    fn rows(&self) -> impl Iterator<Item = (&[usize], &[f64])> {
        self.order.chunks_exact(self.k).zip(self.values.chunks_exact(self.k))
    }

    fn len(&self) -> usize {
        self.order.len() / self.k
    }
}

fn check_inputs(pi: &ProbabilityVector, samples: &PosteriorSamples, m: u32) -> Result<(), GradError> {
    if m < 2 {
        return Err(GradError::TooFewDraws(m));
    }
    if pi.len() != samples.k {
        return Err(GradError::DimensionMismatch { expected: samples.k, got: pi.len() });
    }
    let sum: f64 = pi.weights().iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(GradError::NotSimplex(sum));
    }
    Ok(())
}

/// Fills `tails[r] = Σ_{j>r} π_(j)` for ranks `r = 0..K` (0-based), so
/// `tails[K−1] = 0` and the leading mass `1 − Σ_{j<0}` is taken as one.
fn rank_tails(w: &[f64], order: &[usize], tails: &mut [f64]) {
    let k = order.len();
    let mut acc = 0.0;
    for r in (0..k).rev() {
        tails[r] = acc;
        acc += w[order[r]];
    }
}

fn objective_ranked(pi: &ProbabilityVector, ranked: &RankedSamples, m: u32) -> f64 {
    let w = pi.weights();
    let mi = m as i32;
    let mut tails = vec![0.0; ranked.k];
    let mut total = 0.0;
    for (order, values) in ranked.rows() {
        rank_tails(w, order, &mut tails);
        let mut above = 1.0;
        let mut s = 0.0;
        for r in 0..ranked.k {
            let below = tails[r].powi(mi);
            s += values[r] * (above - below);
            above = below;
        }
        total += s;
    }
    total / ranked.len() as f64
}

fn grad_ranked(pi: &ProbabilityVector, ranked: &RankedSamples, m: u32) -> Vec<f64> {
    let w = pi.weights();
    let k = ranked.k;
    let mf = m as f64;
    let mi = m as i32 - 1;
    let mut tails = vec![0.0; k];
    let mut g = vec![0.0; k];
    for (order, values) in ranked.rows() {
        rank_tails(w, order, &mut tails);
        // rank K−1 (last) contributes nothing: its trailing mass is zero
        let mut acc = 0.0;
        for r in (0..k - 1).rev() {
            acc += mf * (values[r] - values[r + 1]) * tails[r].powi(mi);
            g[order[r]] += acc;
        }
    }
    let n = ranked.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Average over samples of the expected best value among `M` draws from `π`.
pub fn sampled_objective(pi: &ProbabilityVector, samples: &PosteriorSamples, m: u32) -> Result<f64, GradError> {
    check_inputs(pi, samples, m)?;
    Ok(objective_ranked(pi, &RankedSamples::new(samples), m))
}

/// Policy gradient of [`sampled_objective`], scattered back to arm order.
pub fn grad_policy(pi: &ProbabilityVector, samples: &PosteriorSamples, m: u32) -> Result<Vec<f64>, GradError> {
    check_inputs(pi, samples, m)?;
    Ok(grad_ranked(pi, &RankedSamples::new(samples), m))
}

/// Push-forward of a policy gradient to softmax logits, `π ⊙ (g − ⟨g, π⟩)`.
pub fn grad_logits(pi: &ProbabilityVector, g: &[f64]) -> Result<Vec<f64>, GradError> {
    let w = pi.weights();
    if w.len() != g.len() {
        return Err(GradError::DimensionMismatch { expected: w.len(), got: g.len() });
    }
    let mean: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    Ok(w.iter().zip(g).map(|(p, gi)| p * (gi - mean)).collect())
}

/// Simplex KKT gap `max_i g_i − ⟨g, π⟩`.
pub fn kkt_gap(pi: &ProbabilityVector, g: &[f64]) -> f64 {
    let w = pi.weights();
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    max - mean
}

/// Result of one round of the inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub policy: ProbabilityVector,
    pub state: LogitState,
    /// Gap at every visited policy, ending with the gap at `policy`.
    pub kkt_trace: Vec<f64>,
    /// Adam updates applied.
    pub steps: usize,
}

impl RoundOutcome {
    pub fn final_gap(&self) -> f64 {
        *self.kkt_trace.last().expect("trace always holds the initial gap")
    }
}

/// Runs up to `L` Adam ascent steps on the logits against fixed posterior
/// samples, stopping as soon as the KKT gap drops to `kkt_tol`.
pub fn optimize_round(
    state: LogitState,
    samples: &PosteriorSamples,
    cfg: &GradConfig,
) -> Result<RoundOutcome, GradError> {
    cfg.validate()?;
    if state.logits.len() != samples.k {
        return Err(GradError::DimensionMismatch { expected: samples.k, got: state.logits.len() });
    }
    let ranked = RankedSamples::new(samples);
    let mut state = state;
    state.reset_moments();
    let mut trace = Vec::with_capacity(cfg.max_steps + 1);
    let mut steps = 0;
    let mut stopped = false;
    for step in 1..=cfg.max_steps {
        let pi = state.policy();
        let g = grad_ranked(&pi, &ranked, cfg.m);
        let gap = kkt_gap(&pi, &g);
        trace.push(gap);
        if gap <= cfg.kkt_tol {
            stopped = true;
            break;
        }
        let gz = grad_logits(&pi, &g)?;
        adam_ascent_step(&mut state, &gz, step as i32, cfg);
        steps = step;
    }
    let policy = state.policy();
    if !stopped {
        let g = grad_ranked(&policy, &ranked, cfg.m);
        trace.push(kkt_gap(&policy, &g));
    }
    state.reset_moments();
    Ok(RoundOutcome { policy, state, kkt_trace: trace, steps })
}

fn adam_ascent_step(state: &mut LogitState, grad: &[f64], step: i32, cfg: &GradConfig) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(step);
    let c2 = 1.0 - b2.powi(step);
    for i in 0..grad.len() {
        state.adam_m[i] = b1 * state.adam_m[i] + (1.0 - b1) * grad[i];
        state.adam_v[i] = b2 * state.adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = state.adam_m[i] / c1;
        let v_hat = state.adam_v[i] / c2;
        state.logits[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    state.step_count += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn samples(rows: &[&[f64]]) -> PosteriorSamples {
        PosteriorSamples::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> ProbabilityVector {
        let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
        ProbabilityVector::normalized(raw).unwrap()
    }

    // Brute-force E[max over distinct drawn arms] by enumerating all K^M tuples.
    fn enumerate(pi: &[f64], theta: &[f64], m: u32) -> f64 {
        let k = pi.len();
        let total = k.pow(m);
        let mut acc = 0.0;
        for code in 0..total {
            let (mut c, mut p, mut best) = (code, 1.0, f64::NEG_INFINITY);
            for _ in 0..m {
                let a = c % k;
                c /= k;
                p *= pi[a];
                best = best.max(theta[a]);
            }
            acc += p * best;
        }
        acc
    }

    #[test]
    fn two_arm_half_half() {
        let s = samples(&[&[1.0, 0.0]]);
        let v = sampled_objective(&ProbabilityVector::uniform(2), &s, 2).unwrap();
        assert_abs_diff_eq!(v, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn point_mass_reuses_sample() {
        let s = samples(&[&[0.3, -1.0, 2.0], &[0.5, 0.1, -0.4]]);
        for m in 2..6 {
            let v = sampled_objective(&ProbabilityVector::vertex(3, 0), &s, m).unwrap();
            assert_abs_diff_eq!(v, 0.4, epsilon = 1e-15);
        }
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pi = random_simplex(&mut rng, 3);
            let s = PosteriorSamples::new(3, theta.clone()).unwrap();
            let v = sampled_objective(&pi, &s, 3).unwrap();
            assert!((v - enumerate(pi.weights(), &theta, 3)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = samples(&[&[1.0, 0.0]]);
        assert_eq!(sampled_objective(&ProbabilityVector::uniform(2), &s, 1), Err(GradError::TooFewDraws(1)));
        assert!(grad_policy(&ProbabilityVector::uniform(3), &s, 2).is_err());
    }

    #[test]
    fn flat_sample_has_zero_gradient() {
        let s = samples(&[&[0.7, 0.7, 0.7]]);
        let g = grad_policy(&ProbabilityVector::uniform(3), &s, 3).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn m2_gradient_is_quadratic_form_up_to_a_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let k = rng.random_range(2..7);
            let theta: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pi = random_simplex(&mut rng, k);
            let g = grad_policy(&pi, &PosteriorSamples::new(k, theta.clone()).unwrap(), 2).unwrap();
            let w = pi.weights();
            let quad: Vec<f64> = (0..k)
                .map(|i| {
                    2.0 * (0..k).map(|j| w[j] * if i == j { theta[i] } else { theta[i].max(theta[j]) }).sum::<f64>()
                })
                .collect();
            // the two agree on the simplex tangent space
            let center = |v: &[f64]| {
                let c: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
                v.iter().map(|x| x - c).collect::<Vec<_>>()
            };
            for (a, b) in center(&g).iter().zip(center(&quad)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn grad_logits_cases() {
        let pi = ProbabilityVector::uniform(4);
        let out = grad_logits(&pi, &[2.0; 4]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-16));
        let out = grad_logits(&pi, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(out[0], 0.25 * 0.75, epsilon = 1e-16);
        for v in &out[1..] {
            assert_abs_diff_eq!(*v, -0.25 * 0.25, epsilon = 1e-16);
        }
        assert!(out.iter().sum::<f64>().abs() < 1e-12);
        assert!(grad_logits(&pi, &[1.0]).is_err());
    }

    #[test]
    fn kkt_gap_cases() {
        let g = [0.3, 1.2, -0.4];
        assert_eq!(kkt_gap(&ProbabilityVector::vertex(3, 1), &g), 0.0);
        assert_abs_diff_eq!(kkt_gap(&ProbabilityVector::uniform(3), &[5.0; 3]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kkt_gap(&ProbabilityVector::uniform(2), &[1.0, 0.0]), 0.5, epsilon = 1e-16);
    }

    #[test]
    fn huge_tolerance_takes_no_steps() {
        let cfg = GradConfig { kkt_tol: 1e9, ..GradConfig::default() };
        let mut state = LogitState::new(3);
        state.logits = vec![0.5, -0.2, 0.0];
        let before = state.policy();
        let s = samples(&[&[1.0, 0.0, 0.5]]);
        let out = optimize_round(state, &s, &cfg).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.kkt_trace.len(), 1);
        assert_eq!(out.policy, before);
    }

    #[test]
    fn moments_zeroed_and_logits_kept() {
        let s = samples(&[&[1.0, 0.0], &[0.2, 0.4]]);
        let out = optimize_round(LogitState::new(2), &s, &GradConfig::default()).unwrap();
        assert!(out.state.adam_m.iter().chain(&out.state.adam_v).all(|&v| v == 0.0));
        assert_eq!(out.policy, out.state.policy());
        assert!(out.state.logits.iter().any(|&z| z != 0.0));
    }

    #[test]
    fn early_stop_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let k = rng.random_range(2..6);
            let data: Vec<f64> = (0..k * 10).map(|_| rng.random_range(-0.5..0.5)).collect();
            let s = PosteriorSamples::new(k, data).unwrap();
            let cfg = GradConfig { kkt_tol: 1e-3, max_steps: 40, ..GradConfig::with_m(rng.random_range(2..5)) };
            let out = optimize_round(LogitState::new(k), &s, &cfg).unwrap();
            if out.steps < cfg.max_steps {
                assert!(out.final_gap() <= cfg.kkt_tol);
            }
            assert!(out.kkt_trace.iter().all(|&g| g >= -1e-12));
        }
    }

    #[test]
    fn ascent_improves_objective() {
        let s = samples(&[&[1.0, 0.0, 0.2], &[0.1, 0.9, 0.0], &[0.3, 0.2, 0.25]]);
        let cfg = GradConfig { max_steps: 200, kkt_tol: 1e-9, ..GradConfig::with_m(3) };
        let start = sampled_objective(&ProbabilityVector::uniform(3), &s, 3).unwrap();
        let out = optimize_round(LogitState::new(3), &s, &cfg).unwrap();
        assert!(sampled_objective(&out.policy, &s, 3).unwrap() > start);
    }
}
