//! Numerical self-checks behind `remax verify`.
//!
//! Each suite draws random posterior configurations from a fixed seed and
//! checks one library routine against an independent computation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gauss::{self, GaussianMoment};
use crate::policies::ArmEstimate;
use crate::remax_exact::{self, PairwiseMaxMatrix, ProbabilityVector, SolveError};
use crate::remax_grad::{self, PosteriorSamples};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Kkt,
    Grad,
    Mc,
    Grid,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Kkt, Suite::Grad, Suite::Mc, Suite::Grid];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kkt => "kkt",
            Suite::Grad => "grad",
            Suite::Mc => "mc",
            Suite::Grid => "grid",
        }
    }

    pub fn default_cases(self) -> usize {
        match self {
            Suite::Kkt => 1000,
            Suite::Grad => 200,
            Suite::Mc => 50,
            Suite::Grid => 200,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected kkt, grad, mc or grid)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error in the suite's own unit.
    pub worst: f64,
    pub threshold: f64,
    pub note: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Overrides every suite's default case count.
    pub cases: Option<usize>,
    pub mc_draws: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 2024, cases: None, mc_draws: 1_000_000 }
    }
}

/// Random posterior state: `K` arms with counts in `1..=200` and means that
/// occasionally collide, plus reward std and inflation.
pub fn random_posterior<R: Rng + ?Sized>(rng: &mut R, k: usize) -> (Vec<ArmEstimate>, f64, f64) {
    let spread = rng.random_range(0.05..2.0);
    let mut est: Vec<ArmEstimate> = (0..k)
        .map(|_| ArmEstimate { count: rng.random_range(1..=200), mean: rng.random_range(-spread..spread) })
        .collect();
    if k > 2 && rng.random_bool(0.1) {
        est[1].mean = est[0].mean;
    }
    let reward_std = rng.random_range(0.05..1.5);
    let inflation = if rng.random_bool(0.3) { rng.random_range(1.0..2.0) } else { 1.0 };
    (est, reward_std, inflation)
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> SuiteReport {
    let cases = opts.cases.unwrap_or_else(|| suite.default_cases());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ suite as u64);
    match suite {
        Suite::Kkt => kkt_suite(&mut rng, cases),
        Suite::Grad => grad_suite(&mut rng, cases),
        Suite::Mc => mc_suite(&mut rng, cases, opts.mc_draws),
        Suite::Grid => grid_suite(&mut rng, cases),
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<SuiteReport> {
    Suite::ALL.into_iter().map(|s| run_suite(s, opts)).collect()
}

fn report(suite: Suite, cases: usize, failures: usize, worst: f64, threshold: f64, note: String) -> SuiteReport {
    SuiteReport { suite, cases, failures, worst, threshold, note }
}

/// Residuals of a candidate solution computed from scratch.
fn kkt_residual(g: &PairwiseMaxMatrix, pi: &ProbabilityVector) -> (f64, f64) {
    let w = pi.weights();
    let gp = g.mul_vec(w);
    let lambda: f64 = w.iter().zip(&gp).map(|(a, b)| a * b).sum();
    let mut stat = 0.0_f64;
    let mut dual = f64::NEG_INFINITY;
    for (i, &v) in gp.iter().enumerate() {
        if w[i] > 0.0 {
            stat = stat.max((v - lambda).abs());
        } else {
            dual = dual.max(v - lambda);
        }
    }
    let sum: f64 = w.iter().sum();
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    (stat.max(dual), (sum - 1.0).abs().max(-min).max(0.0))
}

fn kkt_suite(rng: &mut ChaCha8Rng, cases: usize) -> SuiteReport {
    const TOL: f64 = 1e-8;
    let (mut failures, mut worst, mut limits) = (0, 0.0_f64, 0);
    for _ in 0..cases {
        let k = rng.random_range(2..=20);
        let (est, sd, c) = random_posterior(rng, k);
        let g = remax_exact::build_pairwise_matrix(&est, c, sd).expect("valid posterior");
        match remax_exact::solve_active_set(&g, remax_exact::DEFAULT_TOL) {
            Ok((pi, _)) => {
                let (kkt, primal) = kkt_residual(&g, &pi);
                worst = worst.max(kkt);
                if kkt > TOL || primal > 1e-12 {
                    failures += 1;
                }
            }
            Err(SolveError::IterationLimit { .. }) => {
                limits += 1;
                failures += 1;
            }
            Err(_) => failures += 1,
        }
    }
    report(Suite::Kkt, cases, failures, worst, TOL, format!("{limits} iteration-limit hits"))
}

fn random_interior<R: Rng + ?Sized>(rng: &mut R, k: usize) -> ProbabilityVector {
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    ProbabilityVector::softmax(&logits)
}

fn grad_suite(rng: &mut ChaCha8Rng, cases: usize) -> SuiteReport {
    const TOL: f64 = 1e-5;
    const H: f64 = 1e-5;
    let (mut failures, mut worst) = (0, 0.0_f64);
    for case in 0..cases {
        let k = rng.random_range(2..=6);
        let m = 2 + (case % 3) as u32;
        let data: Vec<f64> = (0..30 * k).map(|_| StandardNormal.sample(rng)).collect();
        let samples = PosteriorSamples::new(k, data).expect("finite samples");
        let pi = random_interior(rng, k);
        let grad = remax_grad::grad_policy(&pi, &samples, m).expect("valid inputs");
        // directional derivatives along simplex edges e_i − e_j
        for i in 0..k {
            let j = (i + 1) % k;
            let shifted = |h: f64| {
                let mut w = pi.weights().to_vec();
                w[i] += h;
                w[j] -= h;
                remax_grad::sampled_objective(&ProbabilityVector::new(w).expect("interior"), &samples, m)
                    .expect("valid inputs")
            };
            let fd = (shifted(H) - shifted(-H)) / (2.0 * H);
            let exact = grad[i] - grad[j];
            let err = (fd - exact).abs() / exact.abs().max(1.0);
            worst = worst.max(err);
            if err > TOL {
                failures += 1;
            }
        }
    }
    report(Suite::Grad, cases, failures, worst, TOL, "central differences on simplex edges".into())
}

fn mc_suite(rng: &mut ChaCha8Rng, cases: usize, draws: usize) -> SuiteReport {
    const SIGMAS: f64 = 3.0;
    let (mut failures, mut worst) = (0, 0.0_f64);
    for _ in 0..cases {
        let sigma = rng.random_range(0.1..3.0);
        let delta = sigma * rng.random_range(-3.0..3.0);
        let closed = gauss::positive_part_mean(GaussianMoment::new(delta, sigma).expect("positive std"));
        let (m, se) = mc_mean(rng, draws, |r| (delta + sigma * normal(r)).max(0.0));
        let score = (closed - m).abs() / se.max(f64::MIN_POSITIVE);
        worst = worst.max(score);
        if score > SIGMAS {
            failures += 1;
        }

        let a = ArmEstimate { count: rng.random_range(1..50), mean: rng.random_range(-2.0..2.0) };
        let b = ArmEstimate { count: rng.random_range(1..50), mean: rng.random_range(-2.0..2.0) };
        let sd = rng.random_range(0.1..2.0);
        let closed = gauss::pairwise_max_entry(&a, &b, 1.0, sd).expect("pulled arms");
        let (sa, sb) = (sd / (a.count as f64).sqrt(), sd / (b.count as f64).sqrt());
        let (m, se) = mc_mean(rng, draws, |r| (a.mean + sa * normal(r)).max(b.mean + sb * normal(r)));
        let score = (closed - m).abs() / se.max(f64::MIN_POSITIVE);
        worst = worst.max(score);
        if score > SIGMAS {
            failures += 1;
        }
    }
    report(Suite::Mc, cases, failures, worst, SIGMAS, format!("{draws} draws per point, score in standard errors"))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Sample mean and its standard error.
pub fn mc_mean<R: Rng + ?Sized>(rng: &mut R, draws: usize, mut f: impl FnMut(&mut R) -> f64) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for n in 1..=draws {
        let x = f(rng);
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    let var = m2 / (draws as f64 - 1.0);
    (mean, (var / draws as f64).sqrt())
}

/// Best `πᵀGπ` over the grid with the given step, `K ∈ {2, 3}`.
pub fn grid_best(g: &PairwiseMaxMatrix, step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    let k = g.k();
    let eval = |w: &[f64]| -> f64 { w.iter().zip(g.mul_vec(w)).map(|(a, b)| a * b).sum() };
    let mut best = f64::NEG_INFINITY;
    match k {
        2 => {
            for a in 0..=n {
                let p = a as f64 / n as f64;
                best = best.max(eval(&[p, 1.0 - p]));
            }
        }
        3 => {
            for a in 0..=n {
                for b in 0..=n - a {
                    let (p, q) = (a as f64 / n as f64, b as f64 / n as f64);
                    best = best.max(eval(&[p, q, (1.0 - p - q).max(0.0)]));
                }
            }
        }
        _ => panic!("grid oracle supports K = 2 or 3, got {k}"),
    }
    best
}

fn grid_suite(rng: &mut ChaCha8Rng, cases: usize) -> SuiteReport {
    const TOL: f64 = 1e-6;
    let (mut failures, mut worst) = (0, f64::NEG_INFINITY);
    for _ in 0..cases {
        let k = rng.random_range(2..=3);
        let (est, sd, c) = random_posterior(rng, k);
        let g = remax_exact::build_pairwise_matrix(&est, c, sd).expect("valid posterior");
        let Ok((pi, _)) = remax_exact::solve_active_set(&g, remax_exact::DEFAULT_TOL) else {
            failures += 1;
            continue;
        };
        let solver = remax_exact::remax_objective(&pi, &g).expect("matching size");
        let shortfall = grid_best(&g, 1e-3) - solver;
        worst = worst.max(shortfall);
        if shortfall > TOL {
            failures += 1;
        }
    }
    report(Suite::Grid, cases, failures, worst, TOL, "grid best minus solver objective, step 1e-3".into())
}
