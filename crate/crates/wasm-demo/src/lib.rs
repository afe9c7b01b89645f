//! Browser bindings for the interactive ReMax page in `www/`.

use wasm_bindgen::prelude::*;

use remax_core::gauss::{self, GaussianMoment};
use remax_core::harness::{self, RunConfig};
use remax_core::instances;
use remax_core::policies::{ArmEstimate, PolicyConfig, PolicyKind};
use remax_core::remax_exact;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Optimal two-arm probability of the lower arm, `π₂*`, on a grid.
///
/// Arm 1 has posterior `N(0, 1)`; arm 2 has `N(−gap, var)`. Rows run over
/// `var` and columns over `gap`, both spaced linearly; the result is
/// row-major `n_var × n_gap`.
#[wasm_bindgen]
pub fn two_arm_heatmap(
    gap_max: f64,
    n_gap: usize,
    var_min: f64,
    var_max: f64,
    n_var: usize,
) -> Result<Vec<f64>, JsError> {
    if n_gap < 2 || n_var < 2 || !(gap_max > 0.0) || !(var_min > 0.0 && var_max > var_min) {
        return Err(JsError::new("need n_gap, n_var >= 2, gap_max > 0 and 0 < var_min < var_max"));
    }
    let mut out = Vec::with_capacity(n_gap * n_var);
    for r in 0..n_var {
        let var = var_min + (var_max - var_min) * r as f64 / (n_var - 1) as f64;
        let s = (1.0 + var).sqrt();
        for c in 0..n_gap {
            let gap = gap_max * c as f64 / (n_gap - 1) as f64;
            out.push(lower_arm_share(gap, s).map_err(js_err)?);
        }
    }
    Ok(out)
}

fn lower_arm_share(gap: f64, s: f64) -> Result<f64, gauss::GaussError> {
    let up = gauss::positive_part_mean(GaussianMoment::new(-gap, s)?);
    let down = gauss::positive_part_mean(GaussianMoment::new(gap, s)?);
    Ok(if up + down > 0.0 { up / (up + down) } else { 0.5 })
}

/// ReMax policy for user posteriors.
///
/// Returns `[π_1..π_K, s̄_1..s̄_K, λ, πᵀGπ, iterations]`.
#[wasm_bindgen]
pub fn solve_policy(means: &[f64], counts: &[u32], reward_std: f64, inflation: f64) -> Result<Vec<f64>, JsError> {
    if means.len() != counts.len() || means.is_empty() {
        return Err(JsError::new("means and counts must be non-empty and the same length"));
    }
    let est: Vec<ArmEstimate> =
        means.iter().zip(counts).map(|(&mean, &count)| ArmEstimate { count: count as u64, mean }).collect();
    let g = remax_exact::build_pairwise_matrix(&est, inflation, reward_std).map_err(js_err)?;
    let (pi, cert) = remax_exact::solve_active_set(&g, remax_exact::DEFAULT_TOL).map_err(js_err)?;
    let ei = remax_exact::ei_vector(&pi, &est, inflation, reward_std).map_err(js_err)?;
    let obj = remax_exact::remax_objective(&pi, &g).map_err(js_err)?;
    let mut out = pi.into_inner();
    out.extend(ei);
    out.extend([cert.multiplier, obj, cert.iterations as f64]);
    Ok(out)
}

/// Mean cumulative regret of ReMax, Thompson sampling and KL-UCB on a
/// built-in instance, concatenated in that order (`3 × horizon` values).
#[wasm_bindgen]
pub fn simulate(instance: &str, horizon: usize, reps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let inst = instances::builtin(instance).map_err(js_err)?;
    let mut out = Vec::with_capacity(3 * horizon);
    for kind in [PolicyKind::RemaxExact, PolicyKind::Thompson, PolicyKind::KlUcb] {
        let cfg = RunConfig::new(inst.clone(), PolicyConfig::new(kind), horizon, reps, seed);
        let series = harness::run_replicated(&cfg).map_err(js_err)?;
        let regret = harness::find(&series, harness::METRIC_REGRET).expect("regret is always aggregated");
        out.extend_from_slice(&regret.mean);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn instance_names() -> Vec<String> {
    instances::BUILTIN_NAMES.iter().map(|s| s.to_string()).collect()
}
