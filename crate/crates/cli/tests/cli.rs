use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cpn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {stderr}");
    serde_json::from_str(lines[0]).expect("error line is json")
}

const SMALL: &str = r#"{
    "synth": {"n_videos": 12, "n_validation": 4, "t_raw_min": 30, "t_raw_max": 40, "channels": 4},
    "grid": {"T": 16, "D": 16, "N": 4},
    "model": {"input_channels": 4, "hidden_channels": 4, "epochs": 1, "batch_size": 4}
}"#;

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

#[test]
fn help_lists_global_flags_and_commands() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(cpn(&["--help"], dir.path()));
    for word in ["--config", "--seed", "--threads", "--out"] {
        assert!(help.contains(word), "{word} missing from help");
    }
    for cmd in ["synth", "preprocess", "train", "infer", "eval-proposals", "eval-detections", "ensemble"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"mask": {"p": 0.1, "drop_rate": 0.2}}"#).unwrap();
    let err = error_line(&cpn(&["--config", "bad.json", "synth"], dir.path()));
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("drop_rate"));
}

#[test]
fn invalid_values_and_missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"grid": {"T": 8, "D": 16}}"#).unwrap();
    let err = error_line(&cpn(&["--config", "bad.json", "synth"], dir.path()));
    assert_eq!(err["error"], "invalid_argument");

    let err = error_line(&cpn(&["--out", "empty", "eval-proposals"], dir.path()));
    assert_eq!(err["error"], "not_found");
    assert!(err["message"].as_str().unwrap().contains("proposals.json"));
}

#[test]
fn perfect_detections_score_one() {
    let dir = workspace();
    ok(cpn(&["--config", "small.json", "--out", "run", "synth"], dir.path()));
    let anns: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/annotations.json")).unwrap()).unwrap();
    let mut results = serde_json::Map::new();
    for (vid, video) in anns["database"].as_object().unwrap() {
        let dets: Vec<serde_json::Value> = video["annotations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| serde_json::json!({"label": a["label"], "score": 1.0, "segment": a["segment"]}))
            .collect();
        results.insert(vid.clone(), dets.into());
    }
    let file = serde_json::json!({"version": "VERSION 1.3", "results": results, "external_data": {}});
    fs::write(dir.path().join("run/detections.json"), file.to_string()).unwrap();
    let text = ok(cpn(&["--config", "small.json", "--out", "run", "eval-detections"], dir.path()));
    assert!(text.contains("average mAP 100.00"), "{text}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/detection_report.json")).unwrap()).unwrap();
    assert_eq!(report["average_map"], 1.0);
    assert_eq!(report["thresholds"].as_array().unwrap().len(), 10);
}

#[test]
fn full_pipeline_is_idempotent_and_flags_win() {
    let dir = workspace();
    let run = |cmd: &str| ok(cpn(&["--config", "small.json", "--out", "run", "--seed", "4", "--threads", "1", cmd], dir.path()));
    for cmd in ["synth", "preprocess", "train", "infer", "eval-proposals", "eval-detections"] {
        run(cmd);
    }
    let read = |name: &str| fs::read(dir.path().join("run").join(name)).unwrap();
    let first: Vec<Vec<u8>> = ["annotations.json", "model.cpnm", "proposals.json", "proposal_report.json"]
        .iter()
        .map(|n| read(n))
        .collect();
    for cmd in ["synth", "train", "infer", "eval-proposals"] {
        run(cmd);
    }
    let second: Vec<Vec<u8>> = ["annotations.json", "model.cpnm", "proposals.json", "proposal_report.json"]
        .iter()
        .map(|n| read(n))
        .collect();
    assert_eq!(first, second);
    assert!(dir.path().join("run/epoch_list.json").exists());
    assert!(!dir.path().join("cpn_out").exists(), "--out must override paths.out");

    // a different seed gives a different dataset
    ok(cpn(&["--config", "small.json", "--out", "other", "--seed", "5", "synth"], dir.path()));
    assert_ne!(fs::read(dir.path().join("other/annotations.json")).unwrap(), first[0]);
}

#[test]
fn ensemble_of_identical_runs_matches_the_run() {
    let dir = workspace();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", "small.json", "--out", "run"];
        all.extend_from_slice(args);
        ok(cpn(&all, dir.path()))
    };
    for cmd in ["synth", "train", "infer"] {
        run(&[cmd]);
    }
    run(&["ensemble", "--input", "run", "--input", "run", "--weights", "1,3"]);
    let single = fs::read_to_string(dir.path().join("run/proposals.json")).unwrap();
    let fused = fs::read_to_string(dir.path().join("run/ensemble/proposals.json")).unwrap();
    let a: serde_json::Value = serde_json::from_str(&single).unwrap();
    let b: serde_json::Value = serde_json::from_str(&fused).unwrap();
    for (vid, props) in a["results"].as_object().unwrap() {
        let (pa, pb) = (props.as_array().unwrap(), b["results"][vid].as_array().unwrap());
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(pb) {
            assert_eq!(x["segment"], y["segment"]);
            let (sx, sy) = (x["score"].as_f64().unwrap(), y["score"].as_f64().unwrap());
            assert!((sx - sy).abs() <= 1e-12 * sx.max(1e-300), "{sx} vs {sy}");
        }
    }
    assert!(dir.path().join("run/ensemble/detections.json").exists());
}
