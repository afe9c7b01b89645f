//! Experiment engine: single runs, seeded replication, per-round aggregation
//! and the CSV format consumed by the plotting tools.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::instances::BanditInstance;
use crate::policies::{PolicyConfig, PolicyError, PolicyKind, PolicyState};

pub const METRIC_REGRET: &str = "regret";
pub const METRIC_UNDERESTIMATION: &str = "underestimation";
pub const METRIC_REGRET_UNDER: &str = "regret_under";
pub const METRIC_REGRET_NOT_UNDER: &str = "regret_not_under";
pub const METRIC_KKT_GAP: &str = "kkt_gap";

pub const CSV_HEADER: [&str; 5] = ["metric", "t", "mean", "stderr", "n_runs"];

/// Replications computed together before being folded into the aggregate.
const CHUNK: usize = 16;

const UNDERESTIMATION_CONVENTION: &str =
    "1{mu_hat_best < mu_second_best} after the round-t update; 0 before the best arm's first pull";
const DECOMPOSITION_CONVENTION: &str =
    "regret increment routed by 1{mu_hat_best < mu_second_best} at round entry, before the pull";
const STDERR_CONVENTION: &str = "sample std (n-1) / sqrt(n_runs); 0 and stderr_defined=false when n_runs < 2";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("replication {replication}: {source}")]
    Policy { replication: usize, source: PolicyError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub instance: BanditInstance,
    pub policy: PolicyConfig,
    pub horizon: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub record_kkt: bool,
    /// Drop the policy kind from seed derivation so every policy starts
    /// from the same stream.
    pub shared_noise: bool,
}

impl RunConfig {
    pub fn new(instance: BanditInstance, policy: PolicyConfig, horizon: usize, replications: usize, seed: u64) -> Self {
        Self { instance, policy, horizon, replications, master_seed: seed, record_kkt: false, shared_noise: false }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon < self.instance.k() {
            return Err(HarnessError::Config(format!(
                "horizon {} is shorter than the {} initialization rounds",
                self.horizon,
                self.instance.k()
            )));
        }
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be at least 1".into()));
        }
        self.policy.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Stream seed of replication `rep`.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        let tag = if self.shared_noise { 0 } else { self.policy.kind.stream_tag() };
        derive_seed(self.master_seed, rep as u64, tag)
    }

    /// Key/value pairs echoed as CSV comment lines.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let m = match self.policy.kind {
            PolicyKind::RemaxGrad => self.policy.grad.m.to_string(),
            _ => "na".to_string(),
        };
        [
            ("instance", self.instance.name().to_string()),
            ("policy", self.policy.kind.name().to_string()),
            ("m", m),
            ("inflation", format!("{:?}", self.policy.inflation)),
            ("horizon", self.horizon.to_string()),
            ("replications", self.replications.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("shared_noise", self.shared_noise.to_string()),
            ("underestimation_indicator", UNDERESTIMATION_CONVENTION.to_string()),
            ("decomposition_indicator", DECOMPOSITION_CONVENTION.to_string()),
            ("stderr", STDERR_CONVENTION.to_string()),
            ("stderr_defined", (self.replications >= 2).to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `(master, rep, tag)` into one 64-bit ChaCha seed.
pub fn derive_seed(master: u64, rep: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ rep) ^ tag)
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cumulative per-round metrics of one run; index `t-1` holds round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTrace {
    pub regret: Vec<f64>,
    pub underestimation: Vec<u64>,
    pub regret_under: Vec<f64>,
    pub regret_not_under: Vec<f64>,
    /// Rounds `K+1..=T` of a ReMax run with gap recording on.
    pub kkt_gap: Option<Vec<f64>>,
    pub pulls: Vec<u64>,
}

impl MetricTrace {
    pub fn horizon(&self) -> usize {
        self.regret.len()
    }
}

/// Plays one run of `cfg` on the stream `seed`.
pub fn run_single(cfg: &RunConfig, seed: u64) -> Result<MetricTrace, PolicyError> {
    run_with_rng(cfg, &mut stream(seed))
}

/// Plays one run drawing every random number from `rng` in call order.
pub fn run_with_rng<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<MetricTrace, PolicyError> {
    let inst = &cfg.instance;
    let (k, horizon) = (inst.k(), cfg.horizon);
    let best = inst.best_arm();
    let second = inst.second_best_mean();
    let sigma = inst.reward_std();
    let record = cfg.record_kkt && cfg.policy.kind.is_remax();

    let mut state = PolicyState::new(k, cfg.policy.kind);
    let mut trace = MetricTrace {
        regret: Vec::with_capacity(horizon),
        underestimation: Vec::with_capacity(horizon),
        regret_under: Vec::with_capacity(horizon),
        regret_not_under: Vec::with_capacity(horizon),
        kkt_gap: record.then(|| Vec::with_capacity(horizon.saturating_sub(k))),
        pulls: vec![0; k],
    };
    let (mut reg, mut under, mut not_under, mut uhat) = (0.0, 0.0, 0.0, 0u64);
    let underestimated = |s: &PolicyState| s.estimates[best].count > 0 && s.estimates[best].mean < second;

    for _ in 0..horizon {
        let entry_under = underestimated(&state);
        let arm = match state.init_phase_arm() {
            Some(arm) => arm,
            None => {
                let arm = state.select(&cfg.policy, sigma, rng)?;
                if let Some(g) = trace.kkt_gap.as_mut() {
                    g.push(state.last_kkt_gap.unwrap_or(f64::NAN));
                }
                arm
            }
        };
        let z: f64 = StandardNormal.sample(rng);
        state.update(arm, inst.means()[arm] + sigma * z);
        trace.pulls[arm] += 1;

        let inc = inst.gap(arm);
        reg += inc;
        if entry_under {
            under += inc;
        } else {
            not_under += inc;
        }
        if underestimated(&state) {
            uhat += 1;
        }
        trace.regret.push(reg);
        trace.regret_under.push(under);
        trace.regret_not_under.push(not_under);
        trace.underestimation.push(uhat);
    }
    Ok(trace)
}

/// Per-round mean and standard error of one metric across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub metric: String,
    pub t: Vec<u64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_runs: usize,
    pub stderr_defined: bool,
}

impl AggregateSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last_mean(&self) -> Option<f64> {
        self.mean.last().copied()
    }

    pub fn last_stderr(&self) -> Option<f64> {
        self.stderr.last().copied()
    }
}

/// Welford accumulator over equal-length series.
struct Accumulator {
    metric: &'static str,
    t0: u64,
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(metric: &'static str, t0: u64, len: usize) -> Self {
        Self { metric, t0, n: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, values: impl Iterator<Item = f64>) {
        self.n += 1;
        let n = self.n as f64;
        for ((x, mean), m2) in values.zip(self.mean.iter_mut()).zip(self.m2.iter_mut()) {
            let d = x - *mean;
            *mean += d / n;
            *m2 += d * (x - *mean);
        }
    }

    fn finish(self) -> AggregateSeries {
        let n = self.n;
        let stderr = if n >= 2 {
            let nf = n as f64;
            self.m2.iter().map(|m2| (m2.max(0.0) / (nf - 1.0)).sqrt() / nf.sqrt()).collect()
        } else {
            vec![0.0; self.mean.len()]
        };
        AggregateSeries {
            metric: self.metric.to_string(),
            t: (0..self.mean.len() as u64).map(|i| self.t0 + i).collect(),
            mean: self.mean,
            stderr,
            n_runs: n,
            stderr_defined: n >= 2,
        }
    }
}

/// Aggregates the series of `cfg` across replications.
pub fn run_replicated(cfg: &RunConfig) -> Result<Vec<AggregateSeries>, HarnessError> {
    run_replicated_with(cfg, |_, _| {})
}

/// As [`run_replicated`], handing each trace to `inspect` in replication order.
pub fn run_replicated_with<F>(cfg: &RunConfig, mut inspect: F) -> Result<Vec<AggregateSeries>, HarnessError>
where
    F: FnMut(usize, &MetricTrace),
{
    cfg.validate()?;
    let horizon = cfg.horizon;
    let k = cfg.instance.k();
    let mut accs = vec![
        Accumulator::new(METRIC_REGRET, 1, horizon),
        Accumulator::new(METRIC_UNDERESTIMATION, 1, horizon),
        Accumulator::new(METRIC_REGRET_UNDER, 1, horizon),
        Accumulator::new(METRIC_REGRET_NOT_UNDER, 1, horizon),
    ];
    let mut kkt = (cfg.record_kkt && cfg.policy.kind.is_remax())
        .then(|| Accumulator::new(METRIC_KKT_GAP, k as u64 + 1, horizon - k));

    let mut start = 0;
    while start < cfg.replications {
        let end = (start + CHUNK).min(cfg.replications);
        for (rep, trace) in (start..end).zip(run_chunk(cfg, start, end)) {
            let trace = trace.map_err(|source| HarnessError::Policy { replication: rep, source })?;
            accs[0].push(trace.regret.iter().copied());
            accs[1].push(trace.underestimation.iter().map(|&u| u as f64));
            accs[2].push(trace.regret_under.iter().copied());
            accs[3].push(trace.regret_not_under.iter().copied());
            if let (Some(acc), Some(g)) = (kkt.as_mut(), trace.kkt_gap.as_ref()) {
                acc.push(g.iter().copied());
            }
            inspect(rep, &trace);
        }
        start = end;
    }
    let mut out: Vec<AggregateSeries> = accs.into_iter().map(Accumulator::finish).collect();
    out.extend(kkt.map(Accumulator::finish));
    Ok(out)
}

#[cfg(feature = "parallel")]
fn run_chunk(cfg: &RunConfig, start: usize, end: usize) -> Vec<Result<MetricTrace, PolicyError>> {
    use rayon::prelude::*;
    (start..end).into_par_iter().map(|rep| run_single(cfg, cfg.replication_seed(rep))).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_chunk(cfg: &RunConfig, start: usize, end: usize) -> Vec<Result<MetricTrace, PolicyError>> {
    (start..end).map(|rep| run_single(cfg, cfg.replication_seed(rep))).collect()
}

pub fn find<'a>(series: &'a [AggregateSeries], metric: &str) -> Option<&'a AggregateSeries> {
    series.iter().find(|s| s.metric == metric)
}

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders the CSV text: `# key: value` lines, then header and rows.
pub fn to_csv_string(series: &[AggregateSeries], metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for s in series {
        let n = s.n_runs.to_string();
        for i in 0..s.len() {
            w.write_record([s.metric.as_str(), &s.t[i].to_string(), &fmt_real(s.mean[i]), &fmt_real(s.stderr[i]), &n])
                .expect("in-memory write");
        }
    }
    let body = w.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&body).expect("ascii csv"));
    out
}

pub fn write_csv(
    series: &[AggregateSeries],
    metadata: &[(String, String)],
    path: impl AsRef<Path>,
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let io = |source| HarnessError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(to_csv_string(series, metadata).as_bytes()).map_err(io)?;
    f.flush().map_err(io)
}

/// Parsed CSV: metadata in file order and series in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvContents {
    pub metadata: Vec<(String, String)>,
    pub series: Vec<AggregateSeries>,
}

impl CsvContents {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn series(&self, metric: &str) -> Option<&AggregateSeries> {
        find(&self.series, metric)
    }
}

pub fn parse_csv(text: &str, origin: &str) -> Result<CsvContents, HarnessError> {
    let err = |message: String| HarnessError::Csv { path: origin.to_string(), message };
    let mut metadata = Vec::new();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let Some(rest) = line.strip_prefix('#') else { break };
        body_start += line.len();
        let rest = rest.trim();
        match rest.split_once(':') {
            Some((k, v)) => metadata.push((k.trim().to_string(), v.trim().to_string())),
            None => metadata.push((rest.to_string(), String::new())),
        }
    }
    let stderr_flag = metadata.iter().find(|(k, _)| k == "stderr_defined").map(|(_, v)| v == "true");

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text[body_start..].as_bytes());
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(err(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_metric: BTreeMap<String, AggregateSeries> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let line = row + 2 + metadata.len();
        let field = |i: usize| rec.get(i).ok_or_else(|| err(format!("line {line}: missing column {}", CSV_HEADER[i])));
        let num = |i: usize| -> Result<f64, HarnessError> {
            field(i)?.parse().map_err(|_| err(format!("line {line}: bad {}", CSV_HEADER[i])))
        };
        let metric = field(0)?.to_string();
        let t: u64 = field(1)?.parse().map_err(|_| err(format!("line {line}: bad t")))?;
        let n_runs: usize = field(4)?.parse().map_err(|_| err(format!("line {line}: bad n_runs")))?;
        let (mean, stderr) = (num(2)?, num(3)?);
        let s = by_metric.entry(metric.clone()).or_insert_with(|| {
            order.push(metric.clone());
            AggregateSeries {
                metric,
                t: Vec::new(),
                mean: Vec::new(),
                stderr: Vec::new(),
                n_runs,
                stderr_defined: stderr_flag.unwrap_or(n_runs >= 2),
            }
        });
        if s.n_runs != n_runs {
            return Err(err(format!("line {line}: n_runs changes within metric {}", s.metric)));
        }
        s.t.push(t);
        s.mean.push(mean);
        s.stderr.push(stderr);
    }
    let series = order.iter().map(|m| by_metric.remove(m).expect("recorded metric")).collect();
    Ok(CsvContents { metadata, series })
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<CsvContents, HarnessError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: shown.clone(), source })?;
    parse_csv(&text, &shown)
}
