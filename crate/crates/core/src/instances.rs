//! Ground-truth bandit instances: the built-in synthetic and dataset-derived
//! mean vectors, and a loader for a small text format.
//!
//! ```text
//! # comment lines are ignored
//! name two_arm
//! reward_std 0.15
//! means 0.9 0.8
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

/// Average click-outcome standard deviation used to normalize the OBD CTRs.
pub const OBD_CLICK_STD: f64 = 0.057774753125;
/// Impressions aggregated into one OBD pull.
pub const OBD_IMPRESSIONS: f64 = 1000.0;

/// Raw per-advertisement click-through rates, arm-index order.
pub const OBD_CTRS: [f64; 80] = [
    0.0029265, 0.0014464, 0.0021134, 0.0026464, 0.0018947, 0.0032350, 0.0024874, 0.0052780, 0.0037272, 0.0025919,
    0.0015018, 0.0033327, 0.0018368, 0.0020283, 0.0029336, 0.0030222, 0.0032011, 0.0036364, 0.0036137, 0.0018426,
    0.0017718, 0.0023036, 0.0028038, 0.0025506, 0.0024710, 0.0019308, 0.0021782, 0.0016784, 0.0037885, 0.0015287,
    0.0045120, 0.0041963, 0.0036784, 0.0032292, 0.0055569, 0.0055678, 0.0028800, 0.0035584, 0.0044478, 0.0053337,
    0.0026211, 0.0055760, 0.0035852, 0.0048702, 0.0024826, 0.0051337, 0.0039318, 0.0055106, 0.0044275, 0.0057023,
    0.0034024, 0.0056714, 0.0049135, 0.0028941, 0.0026866, 0.0038009, 0.0026913, 0.0037623, 0.0049876, 0.0055036,
    0.0048012, 0.0059725, 0.0044809, 0.0056396, 0.0033993, 0.0041044, 0.0038471, 0.0019121, 0.0018957, 0.0035998,
    0.0022913, 0.0030215, 0.0027332, 0.0025879, 0.0020447, 0.0026221, 0.0036932, 0.0024460, 0.0052332, 0.0056697,
];

/// Normalized MovieLens 1M per-movie mean ratings, arm-index order.
pub const MOVIELENS_MEANS: [f64; 31] = [
    0.86074, 0.79806, 0.90208, 0.79304, 0.88125, 0.82937, 0.89074, 0.86747, 0.85094, 0.68196, 0.80458, 0.84699,
    0.81170, 0.86348, 0.75277, 0.79061, 0.85860, 0.89554, 0.87036, 0.86317, 0.82550, 0.91091, 0.81759, 0.82508,
    0.74799, 0.83192, 0.83041, 0.85564, 0.84388, 0.78111, 0.90499,
];

pub const BUILTIN_NAMES: [&str; 6] = ["two_arm", "three_arm", "ten_arm", "failure_mode", "obd", "movielens"];

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("unknown instance `{0}`")]
    Unknown(String),
    #[error("instance needs at least two arms, got {0}")]
    TooFewArms(usize),
    #[error("the largest mean {value} is shared by arms {first} and {second}")]
    TiedMaximum { first: usize, second: usize, value: f64 },
    #[error("reward_std must be positive and finite, got {0}")]
    BadRewardStd(f64),
    #[error("mean of arm {arm} is not finite")]
    NonFiniteMean { arm: usize },
    #[error("CTR must lie in (0, 1), got {0}")]
    CtrOutOfRange(f64),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// True arm means with Gaussian reward noise `reward_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    name: String,
    means: Vec<f64>,
    reward_std: f64,
    best_arm: usize,
    second_best_mean: f64,
}

impl BanditInstance {
    pub fn new(name: impl Into<String>, means: Vec<f64>, reward_std: f64) -> Result<Self, InstanceError> {
        if means.len() < 2 {
            return Err(InstanceError::TooFewArms(means.len()));
        }
        if !(reward_std > 0.0 && reward_std.is_finite()) {
            return Err(InstanceError::BadRewardStd(reward_std));
        }
        if let Some(arm) = means.iter().position(|m| !m.is_finite()) {
            return Err(InstanceError::NonFiniteMean { arm });
        }
        let mut best = 0;
        for (i, &m) in means.iter().enumerate() {
            if m > means[best] {
                best = i;
            }
        }
        if let Some(other) = (0..means.len()).find(|&i| i != best && means[i] == means[best]) {
            let (first, second) = (best.min(other), best.max(other));
            return Err(InstanceError::TiedMaximum { first, second, value: means[best] });
        }
        let second_best_mean =
            means.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, &m)| m).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { name: name.into(), means, reward_std, best_arm: best, second_best_mean })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn reward_std(&self) -> f64 {
        self.reward_std
    }

    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    pub fn best_mean(&self) -> f64 {
        self.means[self.best_arm]
    }

    pub fn second_best_mean(&self) -> f64 {
        self.second_best_mean
    }

    /// Suboptimality gap `μ_best − μ_arm`.
    pub fn gap(&self, arm: usize) -> f64 {
        self.best_mean() - self.means[arm]
    }

    /// Horizon used for this instance in the reference experiments.
    pub fn default_horizon(&self) -> usize {
        match self.name.as_str() {
            "obd" => 3_000,
            "movielens" => 10_000,
            _ => 20_000,
        }
    }

    /// Serializes to the instance file format.
    pub fn to_file_string(&self) -> String {
        let means: Vec<String> = self.means.iter().map(|m| format!("{m:?}")).collect();
        format!("name {}\nreward_std {:?}\nmeans {}\n", self.name, self.reward_std, means.join(" "))
    }
}

/// `CTR · sqrt(1000) / σ̄_click`.
pub fn obd_transform(ctr: f64) -> Result<f64, InstanceError> {
    if !(ctr > 0.0 && ctr < 1.0) {
        return Err(InstanceError::CtrOutOfRange(ctr));
    }
    Ok(ctr * OBD_IMPRESSIONS.sqrt() / OBD_CLICK_STD)
}

pub fn builtin(name: &str) -> Result<BanditInstance, InstanceError> {
    match name {
        "two_arm" => BanditInstance::new(name, vec![0.9, 0.8], 0.15),
        "three_arm" => BanditInstance::new(name, vec![0.05, 0.02, 0.01], 0.02),
        "ten_arm" => BanditInstance::new(name, vec![0.1, 0.05, 0.05, 0.05, 0.02, 0.02, 0.01, 0.01, 0.01, 0.01], 0.05),
        "failure_mode" => {
            let mut means = vec![1.0; 10];
            means[0] = 1.5;
            BanditInstance::new(name, means, 1.0)
        }
        "obd" => {
            let means = OBD_CTRS.iter().map(|&c| obd_transform(c)).collect::<Result<Vec<_>, _>>()?;
            BanditInstance::new(name, means, 1.0)
        }
        "movielens" => BanditInstance::new(name, MOVIELENS_MEANS.to_vec(), 1.0),
        other => Err(InstanceError::Unknown(other.to_string())),
    }
}

/// Parses the instance format; `origin` names the source in errors.
pub fn parse_instance(text: &str, origin: &str) -> Result<BanditInstance, InstanceError> {
    let err = |line: usize, message: String| InstanceError::Parse { path: origin.to_string(), line, message };
    let mut fields =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let mut expect = |key: &str| -> Result<(usize, Vec<&str>), InstanceError> {
        let (line, content) = fields.next().ok_or_else(|| err(0, format!("missing `{key}` line")))?;
        let mut parts = content.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok((line, parts.collect())),
            Some(k) => Err(err(line, format!("expected `{key}`, found `{k}`"))),
            None => Err(err(line, format!("expected `{key}`"))),
        }
    };

    let (line, name) = expect("name")?;
    if name.len() != 1 {
        return Err(err(line, "`name` takes exactly one token".into()));
    }
    let name = name[0].to_string();

    let (line, std_tok) = expect("reward_std")?;
    if std_tok.len() != 1 {
        return Err(err(line, "`reward_std` takes exactly one value".into()));
    }
    let reward_std: f64 =
        std_tok[0].parse().map_err(|_| err(line, format!("reward_std: cannot parse `{}`", std_tok[0])))?;

    let (line, mean_toks) = expect("means")?;
    if mean_toks.len() < 2 {
        return Err(err(line, format!("`means` needs at least 2 entries, got {}", mean_toks.len())));
    }
    let means = mean_toks
        .iter()
        .enumerate()
        .map(|(i, t)| t.parse::<f64>().map_err(|_| err(line, format!("means[{i}]: cannot parse `{t}`"))))
        .collect::<Result<Vec<_>, _>>()?;

    if let Some((extra, _)) = fields.next() {
        return Err(err(extra, "unexpected content after `means`".into()));
    }
    BanditInstance::new(name, means, reward_std)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<BanditInstance, InstanceError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| InstanceError::Io { path: shown.clone(), source })?;
    parse_instance(&text, &shown)
}

/// Resolves `name` or `@path`.
pub fn resolve(spec: &str) -> Result<BanditInstance, InstanceError> {
    match spec.strip_prefix('@') {
        Some(path) => load_instance(path),
        None => builtin(spec),
    }
}
