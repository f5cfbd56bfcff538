use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn urgency(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urgency"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = "\
# small model for fast tests
max_len = 12
embed_dim = 16
hidden = 16
z_dim = 4
mcd_samples = 10
vi_test_samples = 10
learning_rate = 0.01
batch_size = 16
epochs = 200
stop_at_perfect_train_accuracy = true
min_freq = 1
";

/// Generated separable corpus, prepared, plus a small-model config.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: TempDir::new().unwrap(),
        };
        std::fs::write(ws.path("small.cfg"), SMALL_CONFIG).unwrap();
        let synth = urgency(&[
            "synth",
            "--kind",
            "separable",
            "--n",
            "64",
            "--max-words",
            "12",
            "--out",
            p(&ws.path("posts.csv")),
        ]);
        assert_eq!(code(&synth), 0);
        let prep = urgency(&[
            "prepare",
            "--data",
            p(&ws.path("posts.csv")),
            "--out",
            p(&ws.path("prep")),
            "--config",
            p(&ws.path("small.cfg")),
        ]);
        let summary = json(&prep);
        assert_eq!(summary["n_posts"], 64);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, model: &str, out: &str, seed: &str) -> Value {
        json(&urgency(&[
            "train",
            "--model",
            model,
            "--config",
            p(&self.path("small.cfg")),
            "--prepared",
            p(&self.path("prep")),
            "--seed",
            seed,
            "--out",
            p(&self.path(out)),
        ]))
    }
}

#[test]
fn prepare_counts_match_a_hand_count() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("ten.csv");
    std::fs::write(
        &data,
        "text,urgency,course_id\n\
         help the deadline is today,6,a\n\
         thanks for the notes,2,a\n\
         the quiz is broken,5,a\n\
         nice lecture,1,a\n\
         the deadline moved,4,a\n\
         cannot submit the quiz,4.5,a\n\
         ,6,a\n\
         great course,8,a\n\
         the notes are nice,3,a\n\
         help,7,a\n",
    )
    .unwrap();
    let out = dir.path().join("prep");
    let summary = json(&urgency(&[
        "prepare",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--min-freq",
        "2",
        "--max-len",
        "4",
    ]));
    // two rows skipped: blank text (line 8) and urgency 8 (line 9)
    assert_eq!(summary["n_posts"], 8);
    assert_eq!(summary["class_counts"]["urgent"], 4);
    assert_eq!(summary["class_counts"]["non_urgent"], 4);
    let skipped: Vec<u64> = summary["skipped"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["line"].as_u64().unwrap())
        .collect();
    assert_eq!(skipped, [8, 9]);
    // tokens seen at least twice: the, help, deadline, is, quiz, notes, nice; plus <pad>, <unk>
    assert_eq!(summary["vocab_size"], 9);
    // only "help the deadline is today" exceeds four tokens
    assert_eq!(summary["truncated"], 1);
    for f in ["vocab.txt", "examples.tsv", "summary.json", "effective_config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn unusable_data_exits_2() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = urgency(&["prepare", "--data", p(&empty), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);

    let bad_rows = dir.path().join("bad.csv");
    std::fs::write(&bad_rows, "text,urgency\n,3\nhello,0\n").unwrap();
    let o = urgency(&["prepare", "--data", p(&bad_rows), "--out", p(&dir.path().join("y"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&urgency(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&urgency(&[])), 1);

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "hidden = 8\nhiden = 9\n").unwrap();
    let o = urgency(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&o), 1);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("hiden") && stderr.contains(":2"), "{stderr}");

    let o = urgency(&["gradcheck", "--size", "huge"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_evaluate_predict_round_trip() {
    let ws = Workspace::new();
    for kind in ["base", "mcd", "vi"] {
        let trace = ws.train(kind, kind, "3");
        assert_eq!(trace["model_kind"], kind);
        let epochs = trace["epochs"].as_array().unwrap();
        assert_eq!(
            epochs.last().unwrap()["train_accuracy"],
            1.0,
            "{kind} did not fit the corpus"
        );
        assert!(epochs.len() <= 200);
        if kind == "vi" {
            assert!(epochs.iter().all(|e| e["kl"].as_f64().is_some_and(f64::is_finite)));
            assert!(epochs.iter().all(|e| e["reconstruction"].is_number()));
        } else {
            assert!(epochs.iter().all(|e| e["kl"].is_null()));
        }

        let ckpt = ws.path(kind).join("model.ckpt");
        let report = json(&urgency(&[
            "evaluate",
            "--checkpoint",
            p(&ckpt),
            "--test",
            p(&ws.path("prep/examples.tsv")),
        ]));
        assert_eq!(report["accuracy"], 1.0, "{kind}");
        assert_eq!(report["n_test"], 64);

        let o = urgency(&[
            "predict",
            "--checkpoint",
            p(&ckpt),
            "--vocab",
            p(&ws.path("prep/vocab.txt")),
            "--text",
            "urgent the lecture",
            "--text",
            "fine the lecture",
            "--per-sample",
        ]);
        assert_eq!(code(&o), 0);
        let lines: Vec<Value> = String::from_utf8_lossy(&o.stdout)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["predicted_label"], 1);
        assert_eq!(lines[1]["predicted_label"], 0);
        let expected_samples = match kind {
            "base" => 1,
            _ => 10,
        };
        assert_eq!(lines[0]["num_samples"], expected_samples);
        assert_eq!(
            lines[0]["per_sample_logits"].as_array().unwrap().len(),
            expected_samples
        );
    }
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    let ws = Workspace::new();
    ws.train("mcd", "a", "11");
    ws.train("mcd", "b", "11");
    ws.train("mcd", "c", "12");
    let read = |d: &str| std::fs::read(ws.path(d).join("model.ckpt")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn damaged_checkpoint_is_rejected() {
    let ws = Workspace::new();
    ws.train("base", "m", "1");
    let ckpt = ws.path("m").join("model.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = ws.path("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
    let o = urgency(&[
        "evaluate",
        "--checkpoint",
        p(&cut),
        "--test",
        p(&ws.path("prep/examples.tsv")),
    ]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn experiment_reports_every_kind() {
    let ws = Workspace::new();
    let run = |runs: &str, out: &str| {
        json(&urgency(&[
            "experiment",
            "--protocol",
            "80_20",
            "--runs",
            runs,
            "--models",
            "base,mcd,vi",
            "--config",
            p(&ws.path("small.cfg")),
            "--prepared",
            p(&ws.path("prep")),
            "--epochs",
            "3",
            "--out",
            p(&ws.path(out)),
        ]))
    };

    let one = run("1", "one");
    for m in one["models"].as_array().unwrap() {
        assert_eq!(m["accuracy"]["variance"], 0.0);
        assert_eq!(m["accuracy"]["std_dev"], 0.0);
    }

    let two = run("2", "two");
    let kinds: Vec<&str> = two["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["model_kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["base", "mcd", "vi"]);
    assert_eq!(two["per_run"].as_array().unwrap().len(), 2);
    for f in [
        "summary.json",
        "effective_config.txt",
        "run_00/run.json",
        "run_01/run.json",
    ] {
        assert!(ws.path("two").join(f).exists(), "{f}");
    }
}

#[test]
fn gradcheck_passes_and_catches_a_wrong_derivative() {
    let ok = urgency(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = urgency(&["gradcheck", "--negative-control"]);
    assert_eq!(code(&bad), 3);
}
