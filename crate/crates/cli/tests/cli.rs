use std::path::PathBuf;
use std::process::{Command, Output};

fn mini(file: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini").join(file).to_string_lossy().into_owned()
}

fn qgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgen")).args(args).env("RUST_BACKTRACE", "0").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn mine_writes_a_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("catalog.json");
    let text = stdout(&qgen(&["mine", "--dataset", &mini("dataset.json"), "--gamma", "1", "--out", out.to_str().unwrap()]));
    assert!(text.starts_with("8 structures, 20 frequent substructures"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(json["structures"].as_array().unwrap().len(), 8);
}

#[test]
fn oracle_eval_reports_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&qgen(&[
        "eval",
        "--kb",
        &mini("kb.tsv"),
        "--schema",
        &mini("schema.txt"),
        "--dataset",
        &mini("dataset.json"),
        "--gamma",
        "1",
        "--oracle",
        "--clamp",
        "0",
        "--K",
        "2",
        "--theta",
        "0.3",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let row = text.lines().find(|l| l.starts_with("full")).expect("summary row");
    assert_eq!(row.matches("1.000").count(), 4, "{row}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("full.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 5);
    assert_eq!(report["mean"]["questions"], 40);
}

#[test]
fn trained_models_answer_a_question() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().to_str().unwrap();
    let text = stdout(&qgen(&[
        "train",
        "--dataset",
        &mini("dataset.json"),
        "--model-dir",
        models,
        "--gamma",
        "1",
        "--predictor",
        "bow",
    ]));
    assert!(text.contains("dev accuracy"));
    let text = stdout(&qgen(&[
        "generate",
        "--kb",
        &mini("kb.tsv"),
        "--schema",
        &mini("schema.txt"),
        "--model-dir",
        models,
        "--gazetteer",
        &mini("gazetteer.tsv"),
        "--question",
        "Who directed Jaws?",
    ]));
    assert!(text.contains("tokens: who directed <entity>"), "{text}");
    assert!(text.contains("1. SELECT"), "{text}");
    assert!(text.contains("StevenSpielberg"), "{text}");
}

#[test]
fn bad_arguments_are_rejected() {
    let o = qgen(&["eval", "--kb", "k", "--dataset", "d", "--setting", "everything"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown setting"));
    let o = qgen(&["eval", "--kb", "/nonexistent/kb.tsv", "--dataset", &mini("dataset.json")]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/kb.tsv"));
}
