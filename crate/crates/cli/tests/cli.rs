use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn remax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remax")).args(args).env_remove("REMAX_THREADS").output().expect("spawn remax")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn list_instances_shows_builtins() {
    let o = remax(&["list-instances"]);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    for name in ["two_arm", "three_arm", "ten_arm", "failure_mode", "obd", "movielens"] {
        assert!(out.contains(name), "{out}");
    }
}

#[test]
fn run_writes_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = remax(&[
        "run",
        "--instance",
        "two_arm",
        "--policy",
        "remax",
        "--horizon",
        "40",
        "--reps",
        "3",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
        "--record-kkt",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# instance: two_arm\n"));
    assert!(text.contains("# master_seed: 7\n"));
    assert!(text.contains("\nmetric,t,mean,stderr,n_runs\n"));
    for metric in ["regret", "underestimation", "regret_under", "regret_not_under"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{metric},"))).count(), 40, "{metric}");
    }
    assert_eq!(text.lines().filter(|l| l.starts_with("kkt_gap,")).count(), 38);
}

#[test]
fn missing_out_is_config_error() {
    let o = remax(&["run", "--instance", "two_arm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let out = out.to_str().unwrap();
    for args in [
        vec!["run", "--instance", "nope", "--out", out],
        vec!["run", "--instance", "two_arm", "--policy", "ucb", "--out", out],
        vec!["run", "--instance", "two_arm", "--inflation", "0.5", "--out", out],
        vec!["run", "--instance", "two_arm", "--policy", "thompson", "--inflation", "2", "--out", out],
        vec!["run", "--instance", "two_arm", "--policy", "remaxgrad", "--m", "1", "--out", out],
        vec!["run", "--instance", "ten_arm", "--horizon", "5", "--out", out],
        vec!["run", "--instance", "two_arm", "--reps", "0", "--out", out],
        vec!["run", "--instance", "two_arm", "--bogus", "--out", out],
        vec!["sweep", "--preset", "everything", "--out-dir", out],
        vec!["verify", "--suite", "bogus"],
    ] {
        let o = remax(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert!(!Path::new(out).exists());
}

#[test]
fn help_exits_zero() {
    assert!(remax(&["--help"]).status.success());
    assert!(remax(&["run", "--help"]).status.success());
}

#[test]
fn instance_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.txt");
    fs::write(&inst, "# custom\nname custom\nreward_std 0.5\nmeans 1.0 0.2 0.4\n").unwrap();
    let out = dir.path().join("c.csv");
    let arg = format!("@{}", inst.display());
    let o = remax(&[
        "run",
        "--instance",
        &arg,
        "--policy",
        "klucb",
        "--horizon",
        "30",
        "--reps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&out).unwrap().starts_with("# instance: custom\n"));

    fs::write(&inst, "name custom\nreward_std 0.5\nmeans 1.0 1.0\n").unwrap();
    let o = remax(&["run", "--instance", &arg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn threads_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}.csv"));
        let o = remax(&[
            "run",
            "--instance",
            "three_arm",
            "--policy",
            "remax",
            "--horizon",
            "300",
            "--reps",
            "37",
            "--seed",
            "11",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(&out).unwrap());
    }
    let env_out = dir.path().join("env.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_remax"))
        .args([
            "run",
            "--instance",
            "three_arm",
            "--policy",
            "remax",
            "--horizon",
            "300",
            "--reps",
            "37",
            "--seed",
            "11",
        ])
        .args(["--out", env_out.to_str().unwrap()])
        .env("REMAX_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    outputs.push(fs::read(&env_out).unwrap());
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn sweep_presets_name_their_cells() {
    let dir = tempfile::tempdir().unwrap();
    let run = |preset: &str| {
        let out = dir.path().join(preset);
        let o =
            remax(&["sweep", "--preset", preset, "--reps", "2", "--horizon", "90", "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{preset}: {}", stderr(&o));
        files_in(&out)
    };
    let synthetic = run("synthetic");
    assert_eq!(synthetic.len(), 9);
    assert!(synthetic.contains(&"synthetic_ten_arm_klucb.csv".to_string()));

    let failure = run("failure");
    assert_eq!(
        failure,
        [
            "failure_failure_mode_klucb.csv",
            "failure_failure_mode_remax.csv",
            "failure_failure_mode_remax_2.csv",
            "failure_failure_mode_remax_3.csv",
            "failure_failure_mode_remax_4.csv",
            "failure_failure_mode_thompson.csv",
        ]
    );
    let c2 = fs::read_to_string(dir.path().join("failure/failure_failure_mode_remax_3.csv")).unwrap();
    let inflation: f64 = c2.lines().find_map(|l| l.strip_prefix("# inflation: ")).unwrap().parse().unwrap();
    assert!((inflation * inflation - 3.0).abs() < 1e-12);

    let grad = run("remaxgrad");
    assert_eq!(grad.len(), 18);
    let m3 = fs::read_to_string(dir.path().join("remaxgrad/remaxgrad_two_arm_remaxgrad_3.csv")).unwrap();
    assert!(m3.contains("# m: 3\n"));
    assert!(m3.lines().any(|l| l.starts_with("kkt_gap,")));

    let real = run("realworld");
    assert_eq!(real.len(), 6);
}

#[test]
fn verify_single_suite() {
    let o = remax(&["verify", "--suite", "kkt", "--cases", "40", "--seed", "13"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("kkt") && out.contains("PASS"), "{out}");
    assert!(!out.contains("grid"));
    let again = remax(&["verify", "--suite", "kkt", "--cases", "40", "--seed", "13"]);
    assert_eq!(o.stdout, again.stdout);
}
