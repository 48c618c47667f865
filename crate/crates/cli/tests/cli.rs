use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn maskrate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskrate"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const CONFIG: &str = r#"{
  "corpus": "corpus.txt",
  "vocab_size": 120,
  "model": {"n_layers": 1, "n_heads": 2, "d_model": 8, "d_ff": 16, "max_seq_len": 18, "init_seed": 1},
  "train": {"total_steps": 12, "batch_size": 4, "schedule": "linear-0.3-0.15", "eval_every": 4, "checkpoint_every": 6},
  "output_dir": "run"
}"#;

fn workspace() -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let out = maskrate(
        tmp.path(),
        &[
            "synth",
            "--out",
            "corpus.txt",
            "--sequences",
            "80",
            "--words",
            "100",
            "--pairs",
            "pairs.tsv",
            "--n-pairs",
            "10",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    std::fs::write(tmp.path().join("run.json"), CONFIG).unwrap();
    tmp
}

#[test]
fn train_writes_run_files_and_refuses_to_overwrite() {
    let tmp = workspace();
    let dir = tmp.path();
    let out = maskrate(dir, &["train", "run.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in [
        "config.json",
        "vocab.txt",
        "metrics.jsonl",
        "summary.json",
        "checkpoints/step-6.ckpt",
        "checkpoints/step-12.ckpt",
    ] {
        assert!(dir.join("run").join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 12);

    let again = maskrate(dir, &["train", "run.json"]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));

    std::fs::write(dir.join("run/keep.txt"), "mine").unwrap();
    let forced = maskrate(dir, &["train", "run.json", "--force"]);
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
    assert!(dir.join("run/keep.txt").exists(), "--force removed an unrelated file");
    assert_eq!(std::fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap(), metrics);
}

#[test]
fn config_errors_name_the_field_and_exit_2() {
    let tmp = workspace();
    let dir = tmp.path();
    let cases = [
        (CONFIG.replace("linear-0.3-0.15", "linear-0.3"), "train.schedule"),
        (CONFIG.replace("\"batch_size\": 4", "\"batch_size\": 0"), "batch_size"),
        (CONFIG.replace("\"n_heads\": 2", "\"n_heads\": 3"), "n_heads"),
        (
            CONFIG.replace("\"output_dir\"", "\"bogus\": 1, \"output_dir\""),
            "bogus",
        ),
    ];
    for (i, (cfg, field)) in cases.iter().enumerate() {
        let name = format!("bad{i}.json");
        std::fs::write(dir.join(&name), cfg).unwrap();
        let out = maskrate(dir, &["train", &name]);
        assert_eq!(code(&out), 2, "case {i}: {}", stderr(&out));
        assert!(stderr(&out).contains(field), "case {i}: {}", stderr(&out));
    }
    let missing = maskrate(dir, &["train", "nope.json"]);
    assert_ne!(code(&missing), 0);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = workspace();
    let dir = tmp.path();
    assert_eq!(code(&maskrate(dir, &["frobnicate"])), 2);
    assert_eq!(code(&maskrate(dir, &["train", "run.json", "--force", "--resume"])), 2);
    assert_eq!(code(&maskrate(dir, &["synth"])), 2);
}

#[test]
fn eval_reports_loss_and_pair_accuracy() {
    let tmp = workspace();
    let dir = tmp.path();
    assert_eq!(code(&maskrate(dir, &["train", "run.json"])), 0);
    let ck = "run/checkpoints/step-12.ckpt";

    let out = maskrate(
        dir,
        &[
            "eval",
            "--checkpoint",
            ck,
            "--vocab",
            "run/vocab.txt",
            "--data",
            "corpus.txt",
            "--rate",
            "0.2",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["mean_loss"].as_f64().unwrap().is_finite());
    assert_eq!(v["rate"], 0.2);

    let bad_rate = maskrate(
        dir,
        &[
            "eval",
            "--checkpoint",
            ck,
            "--vocab",
            "run/vocab.txt",
            "--data",
            "corpus.txt",
            "--rate",
            "1.5",
        ],
    );
    assert_eq!(code(&bad_rate), 2);

    let pairs = maskrate(
        dir,
        &[
            "eval",
            "--checkpoint",
            ck,
            "--vocab",
            "run/vocab.txt",
            "--pairs",
            "pairs.tsv",
        ],
    );
    assert_eq!(code(&pairs), 0, "{}", stderr(&pairs));
    let text = String::from_utf8(pairs.stdout).unwrap();
    let acc = text.lines().filter(|l| l.contains("accuracy")).count();
    assert!(acc > 0, "{text}");

    let missing = maskrate(
        dir,
        &[
            "eval",
            "--checkpoint",
            "run/none.ckpt",
            "--vocab",
            "run/vocab.txt",
            "--data",
            "corpus.txt",
        ],
    );
    assert_eq!(code(&missing), 1);
}

#[test]
fn resume_continues_an_interrupted_run() {
    let tmp = workspace();
    let dir = tmp.path();
    std::fs::write(dir.join("full.json"), CONFIG.replace("\"run\"", "\"full\"")).unwrap();
    assert_eq!(code(&maskrate(dir, &["train", "full.json"])), 0);
    assert_eq!(code(&maskrate(dir, &["train", "run.json", "--stop-after", "6"])), 0);
    assert_eq!(code(&maskrate(dir, &["train", "run.json", "--resume"])), 0);
    for f in ["metrics.jsonl", "summary.json", "checkpoints/step-12.ckpt"] {
        assert_eq!(
            std::fs::read(dir.join("full").join(f)).unwrap(),
            std::fs::read(dir.join("run").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn compare_and_speedup_reject_bad_input() {
    let tmp = workspace();
    let dir = tmp.path();
    std::fs::write(dir.join("s.json"), r#"{"t": {"a": [1.0], "b": [2.0, 3.0]}}"#).unwrap();
    assert_ne!(code(&maskrate(dir, &["compare", "s.json"])), 0);
    std::fs::write(
        dir.join("s.json"),
        r#"{"t": {"a": [1.0, 1.1, 0.9], "b": [2.0, 2.1, 1.9]}}"#,
    )
    .unwrap();
    let ok = maskrate(dir, &["compare", "s.json"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("**"));
    assert_eq!(code(&maskrate(dir, &["compare", "s.json", "--alpha", "2"])), 2);

    std::fs::write(dir.join("c.csv"), "step,value\n1,0.5\n2,0.6\n").unwrap();
    assert_ne!(code(&maskrate(dir, &["speedup", "c.csv"])), 0);
}

#[test]
fn gradcheck_passes_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let out = maskrate(tmp.path(), &["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-5);
}
