mod common;

use common::*;
use std::path::Path;
use std::process::{Command, Output};

fn gql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gql"))
        .args(args)
        .env_remove("GQL_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const GEN_REQUEST: &str = r#"{"seed": 5, "counts": {"score": 100, "degradation": 100, "comparison": 50}}"#;

fn small_train_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let cfg = dir.join("train.json");
    let text = serde_json::json!({
        "batch_size": 2,
        "group_size": 4,
        "epochs": 1,
        "steps_per_epoch": 10,
        "policy": { "hidden": 8, "embed": 4 },
        "checkpoint_every": 5,
        "out_dir": out,
    });
    write(&cfg, &text.to_string());
    cfg
}

#[test]
fn gen_data_writes_counted_files() {
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.json");
    write(&req, GEN_REQUEST);
    let out = dir.path().join("data");
    let o = gql(&["gen-data", "--config", p(&req), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sha = String::from_utf8(o.stdout).unwrap();
    assert_eq!(sha.trim().len(), 64);
    let lines: usize = ["score", "degradation", "comparison"]
        .iter()
        .map(|t| {
            std::fs::read_to_string(out.join(format!("{t}.jsonl")))
                .unwrap()
                .lines()
                .count()
        })
        .sum();
    assert_eq!(lines, 250);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["data_sha256"], sha.trim());

    let again = dir.path().join("again");
    let o2 = gql(&["gen-data", "--config", p(&req), "--out", p(&again)]);
    assert_eq!(String::from_utf8(o2.stdout).unwrap(), sha);
}

#[test]
fn reward_matches_oracle_aggregate_on_exhaustive_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let mut responses = String::new();
    let mut labels = String::new();
    let mut oracle_total = 0.0;
    let mut count = 0usize;
    let cfg = gql_core::reward::RewardConfig::default();
    for (ti, truth) in all_degradation_truths().iter().enumerate() {
        let gql_core::GroundTruth::Deg(c, s) = truth else {
            unreachable!()
        };
        for (ri, r) in all_degradation_responses().iter().enumerate() {
            let id = format!("t{ti}-r{ri}");
            labels += &serde_json::json!({"id": id, "task": "degradation", "class": c.name(), "severity": s.name()})
                .to_string();
            labels.push('\n');
            responses += &serde_json::json!({"id": id, "response": r.text()}).to_string();
            responses.push('\n');
            oracle_total += oracle_rewards(r, truth, cfg.score_threshold, cfg.alpha1, cfg.alpha2).5;
            count += 1;
        }
    }
    let (rp, lp) = (dir.path().join("responses.jsonl"), dir.path().join("labels.jsonl"));
    write(&rp, &responses);
    write(&lp, &labels);
    let o = gql(&["reward", "--responses", p(&rp), "--labels", p(&lp)]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), count + 1);
    let summary: serde_json::Value = serde_json::from_str(lines[count]).unwrap();
    assert_eq!(summary["summary"]["n_scored"], count);
    let mean = summary["summary"]["mean_total"].as_f64().unwrap();
    assert!((mean - oracle_total / count as f64).abs() < 1e-12);
    let total_from_lines: f64 = lines[..count]
        .iter()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["total"]
                .as_f64()
                .unwrap()
        })
        .sum();
    assert_eq!(total_from_lines, oracle_total);
}

#[test]
fn reward_threshold_flag_changes_grading() {
    let dir = tempfile::tempdir().unwrap();
    let (rp, lp) = (dir.path().join("r.jsonl"), dir.path().join("l.jsonl"));
    write(
        &rp,
        "{\"id\":\"a\",\"response\":\"<think></think><answer>{\\\"rating\\\": 3.3}</answer>\"}\n",
    );
    write(&lp, "{\"id\":\"a\",\"task\":\"score\",\"mos\":3.0}\n");
    let total = |eps: &str| {
        let o = gql(&["reward", "--responses", p(&rp), "--labels", p(&lp), "--epsilon", eps]);
        let first: serde_json::Value =
            serde_json::from_str(String::from_utf8(o.stdout).unwrap().lines().next().unwrap()).unwrap();
        first["total"].as_f64().unwrap()
    };
    assert_eq!(total("0.35"), 2.0);
    assert_eq!(total("0.2"), 1.0);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = small_train_config(dir.path(), &run);
    let o = gql(&["train", "--config", p(&cfg), "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 11);
    for name in ["step_000005.json", "step_000010.json", "final.json"] {
        assert!(run.join("checkpoints").join(name).exists(), "{name}");
    }

    let req = dir.path().join("req.json");
    write(&req, GEN_REQUEST);
    let data = dir.path().join("data");
    assert!(gql(&["gen-data", "--config", p(&req), "--out", p(&data)])
        .status
        .success());
    let (json, csv) = (dir.path().join("m.json"), dir.path().join("m.csv"));
    let ckpt = run.join("checkpoints/final.json");
    let o = gql(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&json),
        "--csv",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["n"], 250);
    assert_eq!(report["n_comparison"], 50);
    let csv = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].split(',').count(), rows[1].split(',').count());
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<String> = ["1", "2"]
        .iter()
        .map(|seed| {
            let run = dir.path().join(format!("run{seed}"));
            let cfg = small_train_config(dir.path(), &run);
            let o = Command::new(env!("CARGO_BIN_EXE_gql"))
                .args(["train", "--config", p(&cfg), "--threads", "1"])
                .env("GQL_SEED", seed)
                .output()
                .unwrap();
            assert!(o.status.success());
            let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
            log.lines().skip(1).collect::<Vec<_>>().join("\n")
        })
        .collect();
    assert_ne!(logs[0], logs[1]);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(gql(&["train", "--config", p(&missing)]).status.code(), Some(4));

    let bad = dir.path().join("bad.json");
    write(&bad, r#"{"batch_size": 4, "not_a_field": 1}"#);
    let o = gql(&["train", "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not_a_field"));

    let zero_group = dir.path().join("zero.json");
    write(&zero_group, r#"{"group_size": 1}"#);
    assert_eq!(gql(&["train", "--config", p(&zero_group)]).status.code(), Some(2));

    let cfg = small_train_config(dir.path(), &dir.path().join("r"));
    let o = Command::new(env!("CARGO_BIN_EXE_gql"))
        .args(["train", "--config", p(&cfg)])
        .env("GQL_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let ckpt = dir.path().join("ckpt.json");
    write(&ckpt, "{\"version\": 1}");
    let req = dir.path().join("req.json");
    write(&req, GEN_REQUEST);
    let data = dir.path().join("data");
    assert!(gql(&["gen-data", "--config", p(&req), "--out", p(&data)])
        .status
        .success());
    assert_eq!(
        gql(&["eval", "--ckpt", p(&ckpt), "--data", p(&data)]).status.code(),
        Some(2)
    );

    assert_eq!(
        gql(&["reward", "--responses", p(&missing), "--labels", p(&missing)])
            .status
            .code(),
        Some(4)
    );
    assert_ne!(gql(&["frobnicate"]).status.code(), Some(0));
}
