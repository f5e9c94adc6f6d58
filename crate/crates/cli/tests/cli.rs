use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
dataset.n_per_class = 30
dataset.classes = 3
dataset.dim = 5
model.hidden = 8
train.batch_size = 16
train.epochs = 3
";

fn tvlars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvlars")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_metrics_and_norms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", &format!("{SMALL}optimizer.kind = tvlars\nrun.output_dir = out\n"));
    let out = tvlars(&["run", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), "epoch,step,train_loss,eval_loss,eval_accuracy,base_lr_value,wall_ms");
    assert_eq!(lines.count(), 3);
    let norms = std::fs::read_to_string(dir.path().join("out/norms.jsonl")).unwrap();
    assert!(norms.lines().next().unwrap().contains("\"lnr\""));
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.cfg", &format!("{SMALL}optimizer.kind = lamb\nrun.output_dir = a\n"));
    let b = write_config(dir.path(), "b.cfg", &format!("{SMALL}optimizer.kind = lamb\nrun.output_dir = b\n"));
    assert_eq!(code(&tvlars(&["run", s(&a)])), 0);
    assert_eq!(code(&tvlars(&["run", s(&b)])), 0);
    let read = |d: &str| std::fs::read(dir.path().join(d).join("metrics.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn config_errors_exit_2_and_list_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        "optimizer.kind = adam\ntrain.batch_size = x\nmystery = 1\n",
    );
    let out = tvlars(&["run", s(&cfg)]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("optimizer.kind") && err.contains("train.batch_size") && err.contains("mystery"));
    assert!(err.contains("train.epochs"), "{err}");
}

#[test]
fn incompatible_schedule_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", &format!("{SMALL}optimizer.kind = lars\nschedule.kind = tvlars\n"));
    assert_eq!(code(&tvlars(&["run", s(&cfg)])), 2);
}

#[test]
fn divergence_exits_3_with_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "d.cfg",
        &format!("{SMALL}optimizer.kind = sgd\noptimizer.lr = 1e200\noptimizer.lr_scaling = none\nrun.output_dir = out\n"),
    );
    let out = tvlars(&["run", s(&cfg)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/divergence.json").exists());
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 2);
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tvlars(&["run", s(&dir.path().join("nope.cfg"))])), 4);
    assert_eq!(code(&tvlars(&["compare", s(&dir.path().join("nope"))])), 4);
}

#[test]
fn schedule_dump_lists_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", &format!("{SMALL}optimizer.kind = lars\n"));
    let out = tvlars(&["schedule", "dump", s(&cfg)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    // 72 training examples in batches of 16: 5 steps per epoch
    assert_eq!(text.lines().count(), 1 + 15);
    assert!(text.starts_with("step,epoch,base_lr_value\n0,0,"));

    let file = dir.path().join("sched.csv");
    assert_eq!(code(&tvlars(&["schedule", "dump", s(&cfg), "--out", s(&file)])), 0);
    assert_eq!(std::fs::read_to_string(file).unwrap(), text);
}

#[test]
fn variance_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.cfg",
        &format!("{SMALL}optimizer.kind = sgd\nvariance.batch_sizes = 2, 4, 8, 16\nvariance.trials = 40\nrun.output_dir = v\n"),
    );
    let out = tvlars(&["variance", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("slope"));
    let csv = std::fs::read_to_string(dir.path().join("v/variance.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let big = write_config(
        dir.path(),
        "big.cfg",
        &format!("{SMALL}optimizer.kind = sgd\nvariance.batch_sizes = 1000\n"),
    );
    assert_eq!(code(&tvlars(&["variance", s(&big)])), 2);
}

#[test]
fn sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    for (name, opt) in [("lars", "lars"), ("lamb", "lamb"), ("tvlars", "tvlars")] {
        write_config(
            dir.path(),
            &format!("{name}.cfg"),
            &format!("{SMALL}optimizer.kind = {opt}\nrun.output_dir = runs/{name}\n"),
        );
    }
    let pattern = dir.path().join("*.cfg");
    let out = tvlars(&["sweep", s(&pattern)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("3 run(s), 0 failed"));

    let runs: Vec<PathBuf> = ["lars", "lamb", "tvlars"].iter().map(|n| dir.path().join("runs").join(n)).collect();
    let out = tvlars(&["compare", s(&runs[0]), s(&runs[1]), s(&runs[2])]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    let best: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(best.len(), 3);
    assert!(best.windows(2).all(|w| w[0] >= w[1]), "{table}");

    let out = tvlars(&["compare", s(&runs[0]), s(&runs[0])]);
    let rows: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn sweep_without_matches_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tvlars(&["sweep", s(&dir.path().join("*.cfg"))])), 2);
}
