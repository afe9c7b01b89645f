use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use remax_core::harness::{self, RunConfig};
use remax_core::instances::{self, BanditInstance};
use remax_core::policies::{PolicyConfig, PolicyKind};
use remax_core::verify::{self, Suite, VerifyOptions};

#[derive(Parser, Debug)]
#[command(name = "remax", version, about = "ReMax bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the built-in instances.
    ListInstances,
    /// Run one (instance, policy) cell and write its CSV.
    Run(RunArgs),
    /// Run a preset grid, one CSV per cell.
    Sweep(SweepArgs),
    /// Run the numerical self-check suites.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
struct ExecArgs {
    /// Independent replications per cell.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "REMAX_THREADS")]
    threads: Option<usize>,
    /// Record the per-round KKT gap of ReMax policies.
    #[arg(long)]
    record_kkt: bool,
    /// Use the same random stream for every policy.
    #[arg(long)]
    shared_noise: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Built-in name or `@path` to an instance file.
    #[arg(long)]
    instance: String,
    #[arg(long, value_enum, default_value_t = PolicyArg::Remax)]
    policy: PolicyArg,
    /// Virtual draws for remaxgrad.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..))]
    m: u32,
    /// Posterior std multiplier c (ReMax only).
    #[arg(long, default_value_t = 1.0)]
    inflation: f64,
    /// Defaults to the instance's reference horizon.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides every cell's reference horizon.
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Run a single suite.
    #[arg(long)]
    suite: Option<String>,
    /// Cases per suite (defaults differ by suite).
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Monte Carlo draws per parameter point.
    #[arg(long, default_value_t = 1_000_000)]
    mc_draws: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PolicyArg {
    Remax,
    Remaxgrad,
    Thompson,
    Klucb,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Remax => PolicyKind::RemaxExact,
            PolicyArg::Remaxgrad => PolicyKind::RemaxGrad,
            PolicyArg::Thompson => PolicyKind::Thompson,
            PolicyArg::Klucb => PolicyKind::KlUcb,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Preset {
    Synthetic,
    Realworld,
    Remaxgrad,
    Failure,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Synthetic => "synthetic",
            Preset::Realworld => "realworld",
            Preset::Remaxgrad => "remaxgrad",
            Preset::Failure => "failure",
        }
    }
}

enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// One cell of a sweep: the file suffix after the preset and instance.
struct Cell {
    instance: BanditInstance,
    policy: PolicyConfig,
    label: String,
}

fn policy_config(kind: PolicyKind, m: u32, inflation: f64) -> PolicyConfig {
    let mut p = match kind {
        PolicyKind::RemaxGrad => PolicyConfig::remax_grad(m),
        other => PolicyConfig::new(other),
    };
    p.inflation = inflation;
    p
}

fn preset_cells(preset: Preset) -> Result<Vec<Cell>, CliError> {
    let baselines = [PolicyKind::RemaxExact, PolicyKind::Thompson, PolicyKind::KlUcb];
    let plain = |instance: &BanditInstance, kind: PolicyKind| Cell {
        instance: instance.clone(),
        policy: PolicyConfig::new(kind),
        label: kind.name().to_string(),
    };
    let load = |names: &[&str]| -> Result<Vec<BanditInstance>, CliError> {
        names.iter().map(|n| instances::builtin(n).map_err(config)).collect()
    };
    let mut cells = Vec::new();
    match preset {
        Preset::Synthetic | Preset::Realworld => {
            let names: &[&str] =
                if preset == Preset::Synthetic { &["two_arm", "three_arm", "ten_arm"] } else { &["obd", "movielens"] };
            for inst in load(names)? {
                cells.extend(baselines.iter().map(|&k| plain(&inst, k)));
            }
        }
        Preset::Remaxgrad => {
            for inst in load(&["two_arm", "three_arm", "ten_arm"])? {
                for m in [2, 3, 4] {
                    cells.push(Cell {
                        instance: inst.clone(),
                        policy: PolicyConfig::remax_grad(m),
                        label: format!("remaxgrad_{m}"),
                    });
                }
                cells.extend(baselines.iter().map(|&k| plain(&inst, k)));
            }
        }
        Preset::Failure => {
            let inst = instances::builtin("failure_mode").map_err(config)?;
            cells.push(plain(&inst, PolicyKind::RemaxExact));
            for c2 in [2u32, 3, 4] {
                cells.push(Cell {
                    instance: inst.clone(),
                    policy: PolicyConfig::remax_inflated(f64::from(c2).sqrt()),
                    label: format!("remax_{c2}"),
                });
            }
            cells.push(plain(&inst, PolicyKind::Thompson));
            cells.push(plain(&inst, PolicyKind::KlUcb));
        }
    }
    Ok(cells)
}

fn build_config(
    instance: BanditInstance,
    policy: PolicyConfig,
    horizon: Option<usize>,
    exec: &ExecArgs,
) -> Result<RunConfig, CliError> {
    let horizon = horizon.unwrap_or_else(|| instance.default_horizon());
    let mut cfg = RunConfig::new(instance, policy, horizon, exec.reps, exec.seed);
    cfg.record_kkt = exec.record_kkt;
    cfg.shared_noise = exec.shared_noise;
    cfg.validate().map_err(config)?;
    Ok(cfg)
}

fn run_cell(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let series = harness::run_replicated(cfg).map_err(runtime)?;
    harness::write_csv(&series, &cfg.metadata(), out).map_err(runtime)
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    match threads {
        Some(0) => Err(config(anyhow!("--threads must be at least 1"))),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(runtime)?.install(f),
        None => f(),
    }
}

fn cmd_list() -> Result<(), CliError> {
    println!("{:<14} {:>4} {:>10} {:>9} {:>8}", "name", "K", "reward_std", "best_arm", "horizon");
    for name in instances::BUILTIN_NAMES {
        let inst = instances::builtin(name).map_err(runtime)?;
        println!(
            "{:<14} {:>4} {:>10} {:>9} {:>8}",
            name,
            inst.k(),
            inst.reward_std(),
            inst.best_arm() + 1,
            inst.default_horizon()
        );
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let instance = instances::resolve(&args.instance).with_context(|| "--instance").map_err(config)?;
    let kind = PolicyKind::from(args.policy);
    if args.m != 2 && kind != PolicyKind::RemaxGrad {
        return Err(config(anyhow!("--m applies to --policy remaxgrad only")));
    }
    let policy = policy_config(kind, args.m, args.inflation);
    policy.validate().with_context(|| "--inflation / --m").map_err(config)?;
    let cfg = build_config(instance, policy, args.horizon, &args.exec)?;
    with_threads(args.exec.threads, || run_cell(&cfg, &args.out))?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let cells = preset_cells(args.preset)?;
    let configs = cells
        .into_iter()
        .map(|cell| {
            let name = format!("{}_{}_{}.csv", args.preset.name(), cell.instance.name(), cell.label);
            let mut exec = args.exec.clone();
            exec.record_kkt |= args.preset == Preset::Remaxgrad && cell.policy.kind.is_remax();
            build_config(cell.instance, cell.policy, args.horizon, &exec).map(|cfg| (name, cfg))
        })
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("--out-dir {}", args.out_dir.display()))
        .map_err(runtime)?;
    with_threads(args.exec.threads, || {
        for (name, cfg) in &configs {
            let path = args.out_dir.join(name);
            run_cell(cfg, &path)?;
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    })
}

fn cmd_verify(args: VerifyArgs) -> Result<bool, CliError> {
    let suites = match &args.suite {
        Some(s) => vec![s.parse::<Suite>().map_err(|e| config(anyhow!("--suite: {e}")))?],
        None => Suite::ALL.to_vec(),
    };
    if args.cases == Some(0) {
        return Err(config(anyhow!("--cases must be at least 1")));
    }
    if args.mc_draws < 2 {
        return Err(config(anyhow!("--mc-draws must be at least 2")));
    }
    let opts = VerifyOptions { seed: args.seed, cases: args.cases, mc_draws: args.mc_draws };
    let mut ok = true;
    println!("{:<6} {:>6} {:>8} {:>12} {:>10}  {:<4}  note", "suite", "cases", "failures", "worst", "threshold", "");
    for suite in suites {
        let r = verify::run_suite(suite, &opts);
        ok &= r.passed();
        println!(
            "{:<6} {:>6} {:>8} {:>12.3e} {:>10.1e}  {:<4}  {}",
            r.suite.name(),
            r.cases,
            r.failures,
            r.worst,
            r.threshold,
            if r.passed() { "PASS" } else { "FAIL" },
            r.note
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::ListInstances => cmd_list().map(|_| true),
        Command::Run(args) => cmd_run(args).map(|_| true),
        Command::Sweep(args) => cmd_sweep(args).map(|_| true),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(CliError::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
