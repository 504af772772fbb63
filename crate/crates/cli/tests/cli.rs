use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn specs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specs"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPECS_SEED")
        .output()
        .expect("spawn specs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().expect("stderr line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {last}"))
}

#[test]
fn segment_reproduces_statue_split() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("in.jsonl"),
        "{\"image_id\":\"s1\",\"caption\":\"A front view of a statue on cement in a park.\"}\n\n",
    )
    .unwrap();
    let out = specs(dir.path(), &["segment", "--input", "in.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["units"], serde_json::json!(["A front view of a statue on cement", "in a park."]));
    assert_eq!(stderr_json(&out)["config"]["rules"]["pp_attach"], true);
}

#[test]
fn correlate_three_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [(1.0, 1.0), (2.0, 3.0), (3.0, 2.0)]
        .iter()
        .enumerate()
        .map(|(i, (m, h))| {
            format!(
                "{{\"image_id\":\"i\",\"caption_id\":\"c{i}\",\"metric_score\":{m},\"human_score\":{h},\"caption_token_count\":{}}}\n",
                40 * i
            )
        })
        .collect::<String>();
    fs::write(dir.path().join("s.jsonl"), rows).unwrap();
    let out = specs(dir.path(), &["correlate", "--samples", "s.jsonl"]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["global"]["kendall_tau"].as_f64().unwrap(), 1.0 / 3.0);

    let csv = specs(dir.path(), &["correlate", "--samples", "s.jsonl", "--format", "csv", "--buckets", "50"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("global,,,3,"));
    assert!(lines[2].contains("skipped"));
}

#[test]
fn correlate_joins_scores_with_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let mut scores = String::new();
    let mut human = String::new();
    for (i, (m, h)) in [(0.1, 1.0), (0.4, 2.0), (0.2, 3.0), (0.9, 4.0)].iter().enumerate() {
        scores += &format!("{{\"image_id\":\"x\",\"caption_id\":\"{i}\",\"specs\":{m}}}\n");
        human += &format!("{{\"image_id\":\"x\",\"caption_id\":\"{i}\",\"human_score\":{h},\"caption\":\"a b c\"}}\n");
    }
    fs::write(dir.path().join("scores.jsonl"), scores).unwrap();
    fs::write(dir.path().join("human.jsonl"), human).unwrap();
    let out = specs(dir.path(), &["correlate", "--scores", "scores.jsonl", "--human", "human.jsonl", "--per-image"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["global"]["n"], 4);
    assert_eq!(doc["per_image"]["images_used"], 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["triplets"],
        vec!["triplets", "--input", "x.jsonl", "--shuffle-rate", "1.5"],
        vec!["correlate", "--samples", "x.jsonl", "--buckets", "120,60"],
    ] {
        let out = specs(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr_json(&out)["error"].is_string(), "{args:?}");
    }
}

#[test]
fn data_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.jsonl"), "{\"image_id\": 3}\n").unwrap();
    fs::write(dir.path().join("blank.jsonl"), "{\"image_id\":\"a\",\"caption\":\"   \"}\n").unwrap();
    fs::write(
        dir.path().join("two.jsonl"),
        "{\"image_id\":\"i\",\"caption_id\":\"a\",\"metric_score\":1,\"human_score\":2,\"caption_token_count\":1}\n",
    )
    .unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["segment", "--input", "missing.jsonl"], "Io"),
        (&["segment", "--input", "bad.jsonl"], "Json"),
        (&["segment", "--input", "blank.jsonl"], "EmptyInput"),
        (&["correlate", "--samples", "two.jsonl"], "TooFewSamples"),
    ];
    for (args, kind) in cases {
        let out = specs(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert_eq!(stderr_json(&out)["error"], kind, "{args:?}");
    }
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for args in [["--help"], ["--version"]] {
        let out = specs(dir.path(), &args);
        assert!(out.status.success());
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn seed_env_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let synth = ["synth", "--images", "20", "--attributes", "8", "--features-out", "f.jsonl", "--captions-out"];
    let out = specs(dir.path(), &[&["--seed", "9"], &synth[..], &["a.jsonl"]].concat());
    assert!(out.status.success());
    let env = Command::new(env!("CARGO_BIN_EXE_specs"))
        .args(synth)
        .arg("b.jsonl")
        .current_dir(dir.path())
        .env("SPECS_SEED", "9")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());
}

#[test]
fn pipeline_with_tables_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = specs(d, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    run(&[
        "--seed",
        "2",
        "synth",
        "--images",
        "30",
        "--attributes",
        "8",
        "--features-out",
        "f.bin",
        "--captions-out",
        "c.jsonl",
    ]);
    run(&["--seed", "2", "triplets", "--input", "c.jsonl", "--output", "t.jsonl", "--pool", "10"]);
    let summary: Value = serde_json::from_slice(&run(&[
        "train",
        "--triplets",
        "t.jsonl",
        "--features",
        "f.bin",
        "--model-out",
        "m.bin",
        "--epochs",
        "2",
        "--lr",
        "1e-3",
    ]))
    .unwrap();
    assert_eq!(summary["epochs"], 2);
    assert_eq!(summary["holdout_images"], 6);

    let csv = String::from_utf8(run(&[
        "sr",
        "--triplets",
        "t.jsonl",
        "--model",
        "m.bin",
        "--features",
        "f.bin",
        "--format",
        "csv",
    ]))
    .unwrap();
    assert_eq!(csv.lines().next(), Some("sr_pos,sr_neg,average,n_pos,n_neg"));

    let pairs: String = (0..3)
        .map(|i| format!("{{\"image_id\":\"img{i:05}\",\"caption_id\":\"c{i}\",\"caption\":\"attr01 attr02\"}}\n"))
        .collect();
    fs::write(d.join("pairs.jsonl"), pairs).unwrap();
    let scored =
        String::from_utf8(run(&["score", "--pairs", "pairs.jsonl", "--model", "m.bin", "--features", "f.bin"]))
            .unwrap();
    for line in scored.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let s = v["specs"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
    }
    assert_eq!(scored.lines().count(), 3);

    let report: Value =
        serde_json::from_slice(&run(&["gradcheck", "--batches", "2", "--triplets", "t.jsonl", "--features", "f.bin"]))
            .unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn train_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(specs(
        d,
        &["synth", "--images", "20", "--attributes", "8", "--features-out", "f.bin", "--captions-out", "c.jsonl"]
    )
    .status
    .success());
    assert!(specs(d, &["triplets", "--input", "c.jsonl", "--output", "t.jsonl"]).status.success());
    fs::write(
        d.join("train.toml"),
        "learning_rate = 0.002\nepochs = 1\nholdout_fraction = 0.0\n\n[weights]\nalpha = 1.0\nbeta = 0.0\ngamma = 0.0\n",
    )
    .unwrap();
    let out = specs(
        d,
        &[
            "train",
            "--triplets",
            "t.jsonl",
            "--features",
            "f.bin",
            "--config",
            "train.toml",
            "--model-out",
            "m.bin",
            "--log",
            "log.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = stderr_json(&out);
    assert_eq!(cfg["config"]["train"]["learning_rate"], 0.002);
    assert_eq!(cfg["config"]["weights"]["beta"], 0.0);
    let log = fs::read_to_string(d.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().nth(1).unwrap().ends_with(",,"));

    fs::write(d.join("bad.toml"), "learning_rate = 0.1\nmomentum = 0.9\n").unwrap();
    let bad = specs(
        d,
        &["train", "--triplets", "t.jsonl", "--features", "f.bin", "--config", "bad.toml", "--model-out", "m.bin"],
    );
    assert_eq!(bad.status.code(), Some(2));
}
