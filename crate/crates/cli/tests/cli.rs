use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = "\
hidden_dim = 12
num_trunk_layers = 1
batch_size = 4
dense_steps = 20
eval_interval = 10
n1 = 40
n2 = 4
r = 2
q = 2
continual_steps = 8
report_rounds = 1, 2
continual_rounds = 2
train_size.CLS-A = 16
train_size.CLS-B = 16
train_size.SEQ = 16
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subnet-forge"))
        .args(args)
        .current_dir(dir)
        .env("SUBNET_FORGE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .expect("runs.log exists")
        .lines()
        .map(|l| serde_json::from_str(l).expect("one JSON object per line"))
        .collect()
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn unknown_flag_and_subcommand_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let log = manifest(&dir.path().join("runs.log"));
    assert_eq!(log.len(), 2);
    assert_eq!(log[0]["status"], "usage-error");
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["gen-data", "train-dense", "find-masks", "train-subnets", "continual", "analyze", "gradcheck", "report"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "hiden_dim = 3\n").unwrap();
    let o = run(dir.path(), &["train-dense", "--config", "bad.cfg", "--out", "d.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hiden_dim"));
    let o = run(dir.path(), &["train-dense", "--config", "missing.cfg", "--out", "d.bin"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["train-dense", "--precision", "f16", "--out", "d.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("d.bin").exists());
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tiny_dir();
    let o = run(dir.path(), &["find-masks", "--config", "tiny.cfg", "--init", "nowhere.bin", "--out", "m.bin"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("junk.bin"), b"STSX\x01\x00\x00\x00").unwrap();
    let o = run(dir.path(), &["analyze", "--masks", "junk.bin", "--out", "o.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset 0"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let err: f64 = text
        .split_whitespace()
        .find_map(|w| w.parse().ok())
        .expect("error value printed");
    assert!(err < 1e-4, "{text}");
    let log = manifest(&dir.path().join("runs.log"));
    assert_eq!(log[0]["seed"], 0);
    assert_eq!(log[0]["status"], "ok");
}

#[test]
fn gen_data_writes_every_split() {
    let dir = tiny_dir();
    let o = run(dir.path(), &["gen-data", "--config", "tiny.cfg", "--out", "data", "--task", "SEQ"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for split in ["train", "eval", "continual"] {
        let body = fs::read_to_string(dir.path().join(format!("data/SEQ.{split}.txt"))).unwrap();
        assert!(body.lines().all(|l| l.starts_with("SEQ\t")));
    }
    assert_eq!(fs::read_to_string(dir.path().join("data/SEQ.train.txt")).unwrap().lines().count(), 16);
    assert!(!dir.path().join("data/CLS-A.train.txt").exists());
    let log = manifest(&dir.path().join("data/runs.log"));
    assert_eq!(log[0]["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tiny_dir();
    let d = dir.path();
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    ok(run(d, &["train-dense", "--config", "tiny.cfg", "--seed", "3", "--out", "dense.bin"]));
    assert!(d.join("curves_mixture.csv").exists());

    let text = ok(run(d, &["find-masks", "--init", "dense.bin", "--out", "masks.bin"]));
    let line = text.lines().find(|l| l.starts_with("CLS-A: sparsity")).expect("sparsity line");
    let nums: Vec<usize> = line.split(|c: char| !c.is_ascii_digit()).filter_map(|w| w.parse().ok()).collect();
    let (kept, total) = (nums[nums.len() - 2], nums[nums.len() - 1]);
    let expected = (0..2).fold(total, |n, _| n - n / 5);
    assert_eq!(kept, expected, "{text}");
    assert!(text.contains("240 training steps"), "{text}");

    let text = ok(run(d, &["analyze", "--masks", "masks.bin", "--out", "overlap.csv"]));
    let percent = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).expect("accounting line");
        line.rsplit(' ').next().unwrap().parse().unwrap()
    };
    let one = percent("Param(%) One SEQ:");
    assert!(one > 60.0 && one < 70.0, "{text}");
    assert!(percent("Param(%) All multi-task:") <= 100.0);
    assert!((percent("Param(%) All single-task:") - 3.0 * one).abs() < 0.11, "{text}");
    let csv = fs::read_to_string(d.join("overlap.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows[0], ["task", "CLS-A", "CLS-B", "SEQ"]);
    for i in 1..4 {
        assert_eq!(rows[i][i], "1.0000");
        for j in 1..4 {
            assert_eq!(rows[i][j], rows[j][i]);
        }
    }

    ok(run(d, &["train-subnets", "--masks", "masks.bin", "--out", "multi.bin"]));
    ok(run(d, &["train-subnets", "--masks", "masks.bin", "--out", "single.bin", "--mode", "single-task"]));
    assert!(d.join("curves_multitask.csv").exists() && d.join("curves_SEQ.csv").exists());
    let o = run(d, &["train-subnets", "--masks", "masks.bin", "--out", "x.bin", "--mode", "sideways"]);
    assert_eq!(o.status.code(), Some(1));

    let text = ok(run(d, &["continual", "--init", "multi.bin", "--masks", "masks.bin", "--task", "SEQ", "--mode", "pruned", "--out", "cl.bin"]));
    assert!(text.contains("->"), "{text}");
    ok(run(d, &["continual", "--init", "dense.bin", "--task", "SEQ", "--mode", "dense-encoder-only", "--out", "enc.bin"]));
    let o = run(d, &["continual", "--init", "dense.bin", "--task", "SEQ", "--mode", "pruned", "--out", "bad.bin"]);
    assert_eq!(o.status.code(), Some(1));

    let log = manifest(&d.join("runs.log"));
    assert_eq!(log.len(), 9);
    let hash = log[0]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for entry in &log {
        assert_eq!(entry["seed"], 3);
        assert!(entry["git_describe"].is_string());
        assert!(entry["argv"].is_array());
    }
    assert_eq!(log[1]["config_hash"], hash.as_str());
    assert_eq!(log[1]["outputs"][0], "masks.bin");
}

#[test]
fn report_writes_summary() {
    let dir = tiny_dir();
    let o = run(dir.path(), &["report", "--config", "tiny.cfg", "--out", "rep", "--precision", "f32"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = dir.path().join("rep");
    let summary = fs::read_to_string(rep.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("experiment,variant,sparsity,param_one,param_all,CLS-A,CLS-B,SEQ"));
    assert_eq!(lines.count(), 7);
    for file in ["overlap.csv", "overlap.svg", "curves_mixture.csv"] {
        assert!(rep.join(file).exists(), "{file}");
    }
    assert!(manifest(&rep.join("runs.log"))[0]["status"] == "ok");
}
