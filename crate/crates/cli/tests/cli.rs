use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "data.d=60",
    "--set",
    "data.n=10",
    "--set",
    "data.s=6",
    "--set",
    "model.m=4",
    "--set",
    "run.test_size=100",
];

fn featlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featlab"))
        .args(args)
        .output()
        .expect("spawn featlab")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("{key} missing"))
}

#[test]
fn train_with_zero_steps_reports_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let mut args = vec!["train", "--algorithm", "gd", "--T", "0", "--seed", "4", "--out-dir", d];
    args.extend_from_slice(SMALL);
    let text = stdout(&featlab(&args));
    assert_eq!(value(&text, "summary.best_iter"), "0");
    assert_eq!(
        value(&text, "summary.train_error_final"),
        value(&text, "summary.train_error_best")
    );
    assert_eq!(value(&text, "optim.eta"), "0.02");
    let run = Path::new(d).join("gd-seed4");
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(run.join("weights_final.txt").exists());
}

#[test]
fn tensor_power_oracle_prints_three_rows_and_slope() {
    let text = stdout(&featlab(&[
        "oracle",
        "tensor-power",
        "--q",
        "3",
        "--sweep",
        "0.02,0.04,0.08",
    ]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x0,t_x,t_x_eta,y_at_tx");
    assert_eq!(lines.len(), 5);
    let slope: f64 = lines[4].strip_prefix("# slope = ").unwrap().parse().unwrap();
    assert!((slope + 1.0).abs() < 0.2);
}

#[test]
fn overlap_oracle_degenerate_case() {
    let text = stdout(&featlab(&[
        "oracle", "overlap", "--d", "100", "--n", "1", "--s", "10", "--trials", "50",
    ]));
    assert_eq!(value(&text, "rate"), "0");
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "optim.algorithm = signgd\nrun.T = 5\nrun.run_id = fromfile\n").unwrap();
    let d = dir.path().to_str().unwrap();
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--eta",
        "0.001",
        "--out-dir",
        d,
    ];
    args.extend_from_slice(SMALL);
    let text = stdout(&featlab(&args));
    assert_eq!(value(&text, "optim.algorithm"), "signgd");
    assert_eq!(value(&text, "optim.eta"), "0.001");
    assert!(dir.path().join("fromfile").join("summary.txt").exists());
}

#[test]
fn gen_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.txt");
    let mut args = vec!["gen", "--seed", "2", "--out", path.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    stdout(&featlab(&args));
    let text = std::fs::read_to_string(&path).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "60 10 6 0.1 0.2 2");
    assert_eq!(body.len(), 11);
    assert!(body[1..].iter().all(|l| l.split(' ').nth(2).unwrap().starts_with("1:")));
}

#[test]
fn invalid_input_exits_nonzero() {
    for args in [
        &["train", "--set", "data.nope=1"][..],
        &["train", "--set", "data.s=0"],
        &["train", "--algorithm", "sgd"],
        &["train", "--preset", "unknown"],
        &["oracle", "tensor-power", "--q", "2"],
        &["frobnicate"],
    ] {
        let out = featlab(args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
