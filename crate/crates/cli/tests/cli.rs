//! End-to-end runs of the `charlead` binary.

use std::path::Path;
use std::process::{Command, Output};

fn charlead(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charlead"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

const CONFIG: &str = "\
n_train = 80
n_valid = 30
n_test = 30
num_layers = 1
hidden_units = 4
adam_epochs = 2
sgd_epochs = 1
batch_size = 16
train = \"data/train.jsonl\"
valid = \"data/valid.jsonl\"
test = \"data/test.jsonl\"
";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), CONFIG).unwrap();
    let out = charlead(dir.path(), &["synth-data", "--config", "run.cfg", "--seed", "3", "--out", "data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_evaluate_export() {
    let dir = setup();
    let d = dir.path();
    let run = |out: &str| charlead(d, &["train", "--config", "run.cfg", "--seed", "3", "--out", out]);
    let a = run("runs/a");
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(String::from_utf8_lossy(&a.stderr).contains("seed: 3"));
    for f in ["manifest.json", "tensors.bin", "run_log.json", "config.toml"] {
        assert!(d.join("runs/a").join(f).is_file(), "{f}");
    }
    assert!(run("runs/b").status.success());
    for f in ["manifest.json", "tensors.bin", "run_log.json"] {
        assert_eq!(
            std::fs::read(d.join("runs/a").join(f)).unwrap(),
            std::fs::read(d.join("runs/b").join(f)).unwrap(),
            "{f}"
        );
    }

    let eval = charlead(d, &["evaluate", "--config", "run.cfg", "--checkpoint", "runs/a", "--quiet"]);
    assert!(eval.status.success());
    assert!(stdout(&eval).contains("Actual leads close rate"));

    let export = |out: &str| {
        charlead(
            d,
            &["export-scores", "--checkpoint", "runs/a", "--data", "data/test.jsonl", "--out", out],
        )
    };
    assert!(export("s1.jsonl").status.success());
    assert!(export("s2.jsonl").status.success());
    let s1 = std::fs::read_to_string(d.join("s1.jsonl")).unwrap();
    assert_eq!(s1, std::fs::read_to_string(d.join("s2.jsonl")).unwrap());
    assert_eq!(s1.lines().count(), 30);
    assert!(s1.lines().all(|l| l.contains("\"rnn_score\"")));
}

#[test]
fn harness_commands_write_reports() {
    let dir = setup();
    let d = dir.path();
    let batching = charlead(d, &["compare-batching", "--config", "run.cfg", "--out", "cmp", "--quiet"]);
    assert_eq!(batching.status.code(), Some(0), "{}", String::from_utf8_lossy(&batching.stderr));
    let text = stdout(&batching);
    assert!(text.contains("Epochs to Convergence") && text.contains("Variable") && text.contains("Fixed (128)"));
    assert!(d.join("cmp/report.json").is_file());

    let ablation = charlead(d, &["ablate-embedding", "--config", "run.cfg", "--out", "abl", "--quiet"]);
    assert!(ablation.status.success());
    assert!(stdout(&ablation).contains("Present, untrained"));
    let missing = charlead(
        d,
        &["ablate-embedding", "--config", "run.cfg", "--embedding", "nope.txt", "--out", "abl2"],
    );
    assert_eq!(missing.status.code(), Some(2));

    let fusion = charlead(d, &["compare-fusion", "--config", "run.cfg", "--out", "fus", "--quiet"]);
    assert!(fusion.status.success(), "{}", String::from_utf8_lossy(&fusion.stderr));
    assert!(stdout(&fusion).contains("Includes RNN's Output"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = charlead(d, &["train", "--config", "missing.cfg", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.cfg"));

    let unknown = charlead(d, &["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(charlead(d, &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(charlead(d, &["train", "--set", "nope=1", "--out", "x"]).status.code(), Some(1));

    // Default data paths do not exist here.
    assert_eq!(charlead(d, &["train", "--out", "x"]).status.code(), Some(2));

    std::fs::write(d.join("bad.jsonl"), "{\"text\": \"hi\", \"label\": 7}\n").unwrap();
    let bad = charlead(d, &["export-scores", "--checkpoint", "x", "--data", "bad.jsonl", "--out", "o"]);
    assert_eq!(bad.status.code(), Some(2));

    for cmd in [
        "synth-data",
        "train",
        "evaluate",
        "export-scores",
        "ablate-embedding",
        "compare-batching",
        "compare-fusion",
    ] {
        let help = charlead(d, &[cmd, "--help"]);
        assert_eq!(help.status.code(), Some(0), "{cmd}");
        let text = stdout(&help);
        for flag in ["--config", "--seed", "--set", "--quiet"] {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
    }
    assert_eq!(charlead(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = setup();
    let d = dir.path();
    let out = charlead(
        d,
        &["train", "--config", "run.cfg", "--set", "adam_lr=1e38", "--out", "r", "--quiet"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
