//! Bandit policies over shared conjugate-Gaussian bookkeeping.
//!
//! Every policy starts by pulling each arm once in index order (the improper
//! prior leaves the posterior undefined before that), then hands over to its
//! selection rule. Posteriors are `N(μ̂_i, c²σ²/N_i)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::gauss::GaussError;
use crate::remax_exact::{self, KktCertificate, ProbabilityVector, SolveError};
use crate::remax_grad::{self, GradConfig, GradError, LogitState, PosteriorSamples};

/// Pull count and empirical mean of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmEstimate {
    pub count: u64,
    /// Meaningless while `count == 0`.
    pub mean: f64,
}

impl ArmEstimate {
    pub fn observe(&mut self, reward: f64) {
        self.count += 1;
        self.mean += (reward - self.mean) / self.count as f64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    RemaxExact,
    RemaxGrad,
    Thompson,
    KlUcb,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::RemaxExact => "remax",
            PolicyKind::RemaxGrad => "remaxgrad",
            PolicyKind::Thompson => "thompson",
            PolicyKind::KlUcb => "klucb",
        }
    }

    /// Stable tag mixed into per-replication seeds.
    pub fn stream_tag(self) -> u64 {
        match self {
            PolicyKind::RemaxExact => 1,
            PolicyKind::RemaxGrad => 2,
            PolicyKind::Thompson => 3,
            PolicyKind::KlUcb => 4,
        }
    }

    pub fn is_remax(self) -> bool {
        matches!(self, PolicyKind::RemaxExact | PolicyKind::RemaxGrad)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remax" | "remax_exact" => Ok(PolicyKind::RemaxExact),
            "remaxgrad" | "remax_grad" => Ok(PolicyKind::RemaxGrad),
            "thompson" | "ts" => Ok(PolicyKind::Thompson),
            "klucb" | "kl-ucb" => Ok(PolicyKind::KlUcb),
            other => Err(PolicyError::Config(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Posterior std multiplier `c ≥ 1`; ReMax kinds only.
    pub inflation: f64,
    pub grad: GradConfig,
    /// Confidence factor on the `ln ln t` term of the KL-UCB index.
    pub klucb_c: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, inflation: 1.0, grad: GradConfig::default(), klucb_c: 0.0 }
    }

    pub fn remax_inflated(inflation: f64) -> Self {
        Self { inflation, ..Self::new(PolicyKind::RemaxExact) }
    }

    pub fn remax_grad(m: u32) -> Self {
        Self { grad: GradConfig::with_m(m), ..Self::new(PolicyKind::RemaxGrad) }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.inflation >= 1.0 && self.inflation.is_finite()) {
            return Err(PolicyError::Config(format!("inflation must be >= 1, got {}", self.inflation)));
        }
        if !self.kind.is_remax() && self.inflation != 1.0 {
            return Err(PolicyError::Config(format!("inflation applies to ReMax only, not {}", self.kind)));
        }
        if self.kind == PolicyKind::RemaxGrad {
            self.grad.validate()?;
        }
        if !self.klucb_c.is_finite() {
            return Err(PolicyError::Config("klucb confidence factor must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("arm {arm} has no pulls yet")]
    ZeroCount { arm: usize },
    #[error("round {round}: {source}")]
    Solver { round: u64, source: SolveError },
    #[error("round {round}: {source}")]
    Grad { round: u64, source: GradError },
    #[error(transparent)]
    Posterior(#[from] GaussError),
    #[error("invalid policy config: {0}")]
    Config(String),
}

impl From<GradError> for PolicyError {
    fn from(e: GradError) -> Self {
        PolicyError::Config(e.to_string())
    }
}

/// Per-run learner state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub estimates: Vec<ArmEstimate>,
    /// 1-indexed round about to be played; `1 + Σ counts`.
    pub round: u64,
    pub logits: Option<LogitState>,
    pub last_policy: Option<ProbabilityVector>,
    pub last_kkt_gap: Option<f64>,
    pub last_certificate: Option<KktCertificate>,
}

impl PolicyState {
    pub fn new(k: usize, kind: PolicyKind) -> Self {
        Self {
            estimates: vec![ArmEstimate::default(); k],
            round: 1,
            logits: (kind == PolicyKind::RemaxGrad).then(|| LogitState::new(k)),
            last_policy: None,
            last_kkt_gap: None,
            last_certificate: None,
        }
    }

    pub fn k(&self) -> usize {
        self.estimates.len()
    }

    /// The forced initialization arm for this round, if still in that phase.
    pub fn init_phase_arm(&self) -> Option<usize> {
        let r = self.round as usize;
        (r <= self.k()).then(|| r - 1)
    }

    fn require_pulled(&self) -> Result<(), PolicyError> {
        match self.estimates.iter().position(|e| e.count == 0) {
            Some(arm) => Err(PolicyError::ZeroCount { arm }),
            None => Ok(()),
        }
    }

    /// Chooses an arm with the configured rule. Every arm must have been
    /// pulled at least once.
    pub fn select<R: Rng + ?Sized>(
        &mut self,
        cfg: &PolicyConfig,
        reward_std: f64,
        rng: &mut R,
    ) -> Result<usize, PolicyError> {
        self.require_pulled()?;
        match cfg.kind {
            PolicyKind::RemaxExact => self.select_remax_exact(cfg, reward_std, rng),
            PolicyKind::RemaxGrad => self.select_remax_grad(cfg, reward_std, rng),
            PolicyKind::Thompson => Ok(thompson_select(&self.estimates, reward_std, rng)),
            PolicyKind::KlUcb => {
                Ok(argmax(self.estimates.iter().map(|e| klucb_index(e, self.round as f64, reward_std, cfg.klucb_c))))
            }
        }
    }

    fn select_remax_exact<R: Rng + ?Sized>(
        &mut self,
        cfg: &PolicyConfig,
        reward_std: f64,
        rng: &mut R,
    ) -> Result<usize, PolicyError> {
        let g = remax_exact::build_pairwise_matrix(&self.estimates, cfg.inflation, reward_std)?;
        let (pi, cert) = remax_exact::solve_active_set(&g, remax_exact::DEFAULT_TOL)
            .map_err(|source| PolicyError::Solver { round: self.round, source })?;
        let arm = pi.sample(rng.random::<f64>());
        self.last_kkt_gap = Some(cert.stationarity_gap.max(cert.max_dual_violation).max(0.0));
        self.last_certificate = Some(cert);
        self.last_policy = Some(pi);
        Ok(arm)
    }

    fn select_remax_grad<R: Rng + ?Sized>(
        &mut self,
        cfg: &PolicyConfig,
        reward_std: f64,
        rng: &mut R,
    ) -> Result<usize, PolicyError> {
        let samples = draw_posterior_samples(&self.estimates, cfg.inflation, reward_std, cfg.grad.samples, rng)?;
        let state = self.logits.take().unwrap_or_else(|| LogitState::new(self.k()));
        let out = remax_grad::optimize_round(state, &samples, &cfg.grad)
            .map_err(|source| PolicyError::Grad { round: self.round, source })?;
        let arm = out.policy.sample(rng.random::<f64>());
        self.last_kkt_gap = Some(out.final_gap());
        self.logits = Some(out.state);
        self.last_policy = Some(out.policy);
        Ok(arm)
    }

    /// Records a reward; the incremental mean equals the improper-prior
    /// posterior mean.
    pub fn update(&mut self, arm: usize, reward: f64) {
        self.estimates[arm].observe(reward);
        self.round += 1;
    }
}

/// `S` joint draws from the independent arm posteriors.
pub fn draw_posterior_samples<R: Rng + ?Sized>(
    estimates: &[ArmEstimate],
    inflation: f64,
    reward_std: f64,
    samples: usize,
    rng: &mut R,
) -> Result<PosteriorSamples, PolicyError> {
    let stds = estimates
        .iter()
        .map(|e| crate::gauss::posterior_std(e, inflation, reward_std))
        .collect::<Result<Vec<_>, _>>()?;
    let k = estimates.len();
    let mut data = Vec::with_capacity(samples * k);
    for _ in 0..samples {
        for (e, sd) in estimates.iter().zip(&stds) {
            let z: f64 = StandardNormal.sample(rng);
            data.push(e.mean + sd * z);
        }
    }
    Ok(PosteriorSamples::new(k, data)?)
}

/// Gaussian Thompson sampling: one posterior draw per arm, largest wins.
pub fn thompson_select<R: Rng + ?Sized>(estimates: &[ArmEstimate], reward_std: f64, rng: &mut R) -> usize {
    argmax(estimates.iter().map(|e| {
        let z: f64 = StandardNormal.sample(rng);
        e.mean + reward_std / (e.count as f64).sqrt() * z
    }))
}

/// Gaussian KL-UCB index `μ̂ + sqrt(2σ²(ln t + c ln ln t) / N)`.
pub fn klucb_index(e: &ArmEstimate, t: f64, reward_std: f64, c: f64) -> f64 {
    let lt = t.ln();
    let mut level = lt;
    if c != 0.0 {
        level += c * lt.ln();
    }
    e.mean + (2.0 * reward_std * reward_std * level.max(0.0) / e.count as f64).sqrt()
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_phase_walks_arms_in_order() {
        let mut st = PolicyState::new(3, PolicyKind::Thompson);
        assert_eq!(st.init_phase_arm(), Some(0));
        st.update(0, 0.1);
        st.update(1, 0.1);
        assert_eq!(st.init_phase_arm(), Some(2));
        st.update(2, 0.1);
        assert_eq!(st.init_phase_arm(), None);
    }

    #[test]
    fn incremental_mean() {
        let mut e = ArmEstimate::default();
        e.observe(0.3);
        assert_eq!((e.count, e.mean), (1, 0.3));
        let mut e = ArmEstimate::default();
        e.observe(0.0);
        e.observe(1.0);
        assert_eq!((e.count, e.mean), (2, 0.5));
    }

    #[test]
    fn mean_of_many_normal_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut e = ArmEstimate::default();
        for _ in 0..1_000_000 {
            e.observe(StandardNormal.sample(&mut rng));
        }
        assert!(e.mean.abs() <= 5e-3);
    }

    #[test]
    fn select_requires_init() {
        let mut st = PolicyState::new(2, PolicyKind::KlUcb);
        st.update(0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = st.select(&PolicyConfig::new(PolicyKind::KlUcb), 1.0, &mut rng).unwrap_err();
        assert_eq!(err, PolicyError::ZeroCount { arm: 1 });
    }

    #[test]
    fn klucb_index_substitution() {
        let e = ArmEstimate { count: 1, mean: 0.0 };
        // ln t = 1 at t = e
        let idx = klucb_index(&e, std::f64::consts::E, 1.0, 0.0);
        assert_abs_diff_eq!(idx, 2f64.sqrt(), epsilon = 1e-15);
        for n in 1..50u64 {
            for t in 3..60u64 {
                let here = klucb_index(&ArmEstimate { count: n, mean: 0.3 }, t as f64, 0.7, 0.0);
                assert!(here > klucb_index(&ArmEstimate { count: n + 1, mean: 0.3 }, t as f64, 0.7, 0.0));
                assert!(here < klucb_index(&ArmEstimate { count: n, mean: 0.3 }, (t + 1) as f64, 0.7, 0.0));
            }
        }
    }

    #[test]
    fn thompson_degenerate_posterior_picks_empirical_best() {
        let est = [
            ArmEstimate { count: 1, mean: 0.2 },
            ArmEstimate { count: 1, mean: 0.5 },
            ArmEstimate { count: 1, mean: 0.4 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(thompson_select(&est, 1e-12, &mut rng), 1);
        }
    }

    #[test]
    fn thompson_shift_invariance_with_shared_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let est: Vec<ArmEstimate> = (0..5)
                .map(|_| ArmEstimate { count: rng.random_range(1..30), mean: rng.random_range(-1.0..1.0) })
                .collect();
            let shifted: Vec<ArmEstimate> = est.iter().map(|e| ArmEstimate { mean: e.mean + 0.75, ..*e }).collect();
            let seed = rng.random::<u64>();
            let a = thompson_select(&est, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = thompson_select(&shifted, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::new(PolicyKind::Thompson).validate().is_ok());
        let mut ts = PolicyConfig::new(PolicyKind::Thompson);
        ts.inflation = 2.0;
        assert!(ts.validate().is_err());
        assert!(PolicyConfig::remax_inflated(0.9).validate().is_err());
        assert!(PolicyConfig::remax_inflated(3f64.sqrt()).validate().is_ok());
        assert!(PolicyConfig::remax_grad(1).validate().is_err());
        assert_eq!("remax".parse::<PolicyKind>().unwrap(), PolicyKind::RemaxExact);
        assert!("bogus".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn remax_exact_two_arm_matches_ratio_closed_form() {
        let mut st = PolicyState::new(2, PolicyKind::RemaxExact);
        // a long run's worth of statistics with μ̂ ≈ μ
        st.estimates = vec![ArmEstimate { count: 15_000, mean: 0.9003 }, ArmEstimate { count: 60, mean: 0.7991 }];
        st.round = 15_061;
        let cfg = PolicyConfig::new(PolicyKind::RemaxExact);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        st.select(&cfg, 0.15, &mut rng).unwrap();
        let pi = st.last_policy.clone().unwrap();
        let (a, b) = (st.estimates[0], st.estimates[1]);
        let g12 = crate::gauss::gap_ei(&a, &b, 1.0, 0.15).unwrap();
        let g21 = crate::gauss::gap_ei(&b, &a, 1.0, 0.15).unwrap();
        let closed = g21 / (g12 + g21);
        assert!((pi.weights()[1] - closed).abs() <= 1e-12 + 1e-8 * closed);
    }

    #[test]
    fn inflation_one_is_bit_identical_to_default() {
        let est = vec![
            ArmEstimate { count: 3, mean: 0.1 },
            ArmEstimate { count: 7, mean: 0.3 },
            ArmEstimate { count: 2, mean: -0.1 },
        ];
        let mut a = PolicyState::new(3, PolicyKind::RemaxExact);
        a.estimates = est.clone();
        a.round = 13;
        let mut b = a.clone();
        let plain = PolicyConfig::new(PolicyKind::RemaxExact);
        let c1 = PolicyConfig::remax_inflated(1.0);
        a.select(&plain, 0.4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        b.select(&c1, 0.4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.last_policy, b.last_policy);
        // a larger c acts exactly like a larger reward std
        let mut c = a.clone();
        let mut d = a.clone();
        c.select(&PolicyConfig::remax_inflated(2.0), 0.4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        d.select(&plain, 0.8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (pc, pd) = (c.last_policy.unwrap(), d.last_policy.unwrap());
        assert!(pc.total_variation(&pd) < 1e-12);
    }

    #[test]
    fn conjugate_precision_update_matches_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let sd: f64 = rng.random_range(0.05..2.0);
            let n = rng.random_range(1..60);
            let mut e = ArmEstimate::default();
            let (mut mu, mut var) = (0.0, 0.0);
            for step in 0..n {
                let r = rng.random_range(-3.0..3.0);
                e.observe(r);
                if step == 0 {
                    mu = r;
                    var = sd * sd;
                } else {
                    let tau_old = 1.0 / var;
                    let tau_new = tau_old + 1.0 / (sd * sd);
                    mu = (tau_old * mu + r / (sd * sd)) / tau_new;
                    var = 1.0 / tau_new;
                }
            }
            assert!((mu - e.mean).abs() < 1e-12);
            assert!((var - sd * sd / e.count as f64).abs() < 1e-12);
        }
    }
}
