use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HEADER: &str =
    "user\titem\tcnt\tdaytime\tweekday\tisweekend\thomework\tcost\tweather\tcountry\tcity";

/// Small Frappe-shaped log: each user prefers a handful of items.
fn raw_log(rows: usize) -> String {
    let times = ["morning", "afternoon", "evening", "night"];
    let days = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in 0..rows {
        let user = r % 25;
        let item = (user * 3 + (r / 25) % 4) % 30;
        let day = days[(r * 5) % 7];
        let weekend = if day == "sat" || day == "sun" {
            "weekend"
        } else {
            "workday"
        };
        writeln!(
            s,
            "{user}\t{item}\t1\t{}\t{day}\t{weekend}\thome\tfree\tsunny\tus\t{}",
            times[(r * 3) % 4],
            user % 3
        )
        .unwrap();
    }
    s
}

fn nfm() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nfm"));
    c.env_remove("NFM_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    nfm().args(args).output().expect("spawn nfm")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "nfm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("frappe.csv"), raw_log(300)).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn prepare(&self, out: &str) -> String {
        ok(&[
            "prepare",
            "--raw",
            s(&self.path("frappe.csv")),
            "--out-dir",
            s(&self.path(out)),
            "--seed",
            "7",
        ])
    }
}

/// `key\tvalue` lines into a lookup.
fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no {key} in {stdout:?}"))
}

#[test]
fn prepare_is_deterministic_and_reports_counts() {
    let ws = Workspace::new();
    let first = ws.prepare("a");
    let second = ws.prepare("b");
    for part in ["train", "validation", "test"] {
        let a = fs::read(ws.path(&format!("a/data.{part}.libfm"))).unwrap();
        let b = fs::read(ws.path(&format!("b/data.{part}.libfm"))).unwrap();
        assert_eq!(a, b, "{part} differs between runs");
    }
    // 300 positives, 2 negatives each, 70/20/10
    assert!(first.starts_with("train\t630\t"), "{first}");
    assert!(first
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("validation\t180\t"));
    assert!(first.lines().nth(2).unwrap().starts_with("test\t90\t"));
    assert_eq!(field(&first, "features"), field(&second, "features"));
    let train = fs::read_to_string(ws.path("a/data.train.libfm")).unwrap();
    for line in train.lines() {
        let mut tok = line.split(' ');
        assert!(matches!(tok.next(), Some("1") | Some("-1")), "{line}");
        assert_eq!(tok.count(), 10, "{line}");
    }
}

#[test]
fn train_then_evaluate() {
    let ws = Workspace::new();
    ws.prepare("data");
    let ckpt = ws.path("nfm.ckpt");
    let out = ok(&[
        "train",
        "--data",
        s(&ws.path("data")),
        "--factors",
        "8",
        "--layers",
        "8",
        "--bn",
        "--dropout",
        "0.2",
        "--epochs",
        "3",
        "--batch-size",
        "64",
        "--out",
        s(&ckpt),
    ]);
    let best: usize = field(&out, "best_epoch").parse().unwrap();
    assert!((1..=3).contains(&best));
    let valid: f64 = field(&out, "valid_rmse").parse().unwrap();
    assert!(valid.is_finite() && valid > 0.0);
    assert!(ckpt.is_file());

    let csv = fs::read_to_string(ws.path("nfm.ckpt.epochs.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,train_rmse,valid_rmse,seconds"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty() && rows.len() <= 3);
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 4, "{row}");
        assert_eq!(cols[0], (i + 1).to_string());
    }

    let eval = ok(&[
        "evaluate",
        "--model",
        s(&ckpt),
        "--data",
        s(&ws.path("data/data.validation.libfm")),
    ]);
    let keys: Vec<&str> = eval
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(keys, ["model", "instances", "rmse", "params"]);
    assert_eq!(field(&eval, "model"), "nfm");
    assert_eq!(field(&eval, "instances"), "180");
    assert_eq!(field(&eval, "params"), field(&out, "params"));
    // the reported validation score is the one the saved model reproduces
    let rmse: f64 = field(&eval, "rmse").parse().unwrap();
    assert!((rmse - valid).abs() <= 5e-7, "{rmse} vs {valid}");

    // same seed, same model bytes
    let again = ws.path("again.ckpt");
    ok(&[
        "train",
        "--data",
        s(&ws.path("data")),
        "--factors",
        "8",
        "--layers",
        "8",
        "--bn",
        "--dropout",
        "0.2",
        "--epochs",
        "3",
        "--batch-size",
        "64",
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn nfm0_from_fm_scores_like_the_fm() {
    let ws = Workspace::new();
    ws.prepare("data");
    let fm = ws.path("fm.ckpt");
    ok(&[
        "train",
        "--method",
        "fm",
        "--data",
        s(&ws.path("data")),
        "--factors",
        "6",
        "--epochs",
        "2",
        "--out",
        s(&fm),
    ]);
    // a negligible step leaves the copied parameters bit-identical
    let nfm0 = ws.path("nfm0.ckpt");
    ok(&[
        "train",
        "--data",
        s(&ws.path("data")),
        "--factors",
        "6",
        "--epochs",
        "1",
        "--lr",
        "1e-300",
        "--pretrain",
        s(&fm),
        "--out",
        s(&nfm0),
    ]);
    let test = ws.path("data/data.test.libfm");
    let a = ok(&["evaluate", "--model", s(&fm), "--data", s(&test)]);
    let b = ok(&["evaluate", "--model", s(&nfm0), "--data", s(&test)]);
    assert_eq!(field(&a, "model"), "fm");
    assert_eq!(field(&b, "model"), "nfm");
    assert_eq!(field(&a, "rmse"), field(&b, "rmse"));
    let raw_a = ok(&[
        "evaluate",
        "--model",
        s(&fm),
        "--data",
        s(&test),
        "--no-clip",
    ]);
    let raw_b = ok(&[
        "evaluate",
        "--model",
        s(&nfm0),
        "--data",
        s(&test),
        "--no-clip",
    ]);
    assert_eq!(field(&raw_a, "rmse"), field(&raw_b, "rmse"));
}

#[test]
fn reproduce_writes_results_csv() {
    let ws = Workspace::new();
    let results = ws.path("results.csv");
    let epochs = ws.path("epochs");
    let out = ok(&[
        "reproduce",
        "--preset",
        "frappe-pooling",
        "--data",
        ws.dir.path().to_str().unwrap(),
        "--max-epochs",
        "1",
        "--out",
        s(&results),
        "--epochs-dir",
        s(&epochs),
    ]);
    let csv = fs::read_to_string(&results).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("method,factors,layers,dropout,lr,seed,valid_rmse,test_rmse,params")
    );
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').count() == 9));
    assert_eq!(fs::read_dir(&epochs).unwrap().count(), rows.len());
    assert!(!out.trim().is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let ws = Workspace::new();
    let missing = ws.path("nope.libfm");
    let cases: Vec<Vec<&str>> = vec![
        vec![],
        vec!["train"],
        vec!["frobnicate"],
        vec!["evaluate", "--model", s(&missing), "--data", s(&missing)],
        vec![
            "train",
            "--train",
            s(&missing),
            "--valid",
            s(&missing),
            "--out",
            "x",
        ],
        vec!["train", "--data", s(&missing), "--out", "x"],
        vec!["prepare", "--raw", s(&missing), "--out-dir", "x"],
        vec![
            "reproduce",
            "--preset",
            "no-such-preset",
            "--data",
            ".",
            "--out",
            "x",
        ],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "nfm {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    ws.prepare("data");
    let bad = run(&[
        "train",
        "--data",
        s(&ws.path("data")),
        "--dropout",
        "1.5",
        "--out",
        s(&ws.path("x.ckpt")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn runtime_failures_exit_one() {
    let ws = Workspace::new();
    let garbage = ws.path("garbage.libfm");
    fs::write(&garbage, "1 0:1\nnot a line\n").unwrap();
    let out = run(&[
        "train",
        "--train",
        s(&garbage),
        "--valid",
        s(&garbage),
        "--out",
        s(&ws.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('2'));

    // a checkpoint that is not one
    let fake = ws.path("fake.ckpt");
    fs::write(&fake, b"definitely not a model").unwrap();
    ws.prepare("data");
    let out = run(&[
        "evaluate",
        "--model",
        s(&fake),
        "--data",
        s(&ws.path("data/data.test.libfm")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
