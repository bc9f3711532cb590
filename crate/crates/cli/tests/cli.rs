use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vdt_core::io::write_dataset;
use vdt_core::synthetic::{synthetic_task, SyntheticConfig};
use vdt_core::vdt::VdtCorpus;
use vdt_core::{mean_prototype, split_base_new, zero_shot_eval};

fn vdt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdt"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?} stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// Six-class synthetic dataset with a stored split; returns the manifest path.
fn fixture(dir: &Path) -> PathBuf {
    let task = synthetic_task(&SyntheticConfig {
        classes: 6,
        test_per_class: 10,
        ..Default::default()
    })
    .unwrap();
    let split = split_base_new(task.bank.class_names(), "synthetic", 0).unwrap();
    write_dataset(dir, "synthetic", &task.bank, &task.test, Some(&task.train), Some(&split)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zeroshot_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let out = vdt(&["zeroshot", "--manifest", s(&manifest), "--tau", "0.01"]);
    assert!(out.status.success());
    let v = json_of(&out);
    let task = synthetic_task(&SyntheticConfig {
        classes: 6,
        test_per_class: 10,
        ..Default::default()
    })
    .unwrap();
    let want = zero_shot_eval(&task.test, &mean_prototype(&task.bank).unwrap(), 0.01).unwrap();
    assert_eq!(v["accuracy"].as_f64().unwrap(), want);
    assert_eq!(v["images"], 60);
    assert!(String::from_utf8_lossy(&out.stderr).contains("images"));

    let score = json_of(&vdt(&["zeroshot", "--manifest", s(&manifest), "--mode", "score", "--classes", "new"]));
    assert_eq!(score["classes"], 3);
    assert_eq!(score["mode"], "score");
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let out = vdt(&["zeroshot", "--tau", "0.01"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--manifest"));
}

#[test]
fn failures_print_error_json() {
    let out = vdt(&["zeroshot", "--manifest", "/nonexistent/m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json_of(&out)["error"], "MissingFile");
}

#[test]
fn gradcheck_passes() {
    let out = vdt(&["gradcheck", "--seed", "7"]);
    assert!(out.status.success());
    let v = json_of(&out);
    assert_eq!(v["pass"], true);
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn train_eval_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let ckpt = dir.path().join("adapter.vdta");
    let result = dir.path().join("train.json");
    let args = [
        "train", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--epochs", "20", "--seed", "3", "--out",
        s(&result),
    ];
    let out = vdt(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(out.stdout.is_empty());
    let first = std::fs::read(&result).unwrap();
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["classes"].as_array().unwrap().len(), 3);
    assert_eq!(v["loss_history"].as_array().unwrap().len(), 20);
    assert!(v.get("wall_clock").is_none());

    // identical flags give byte-identical results
    assert!(vdt(&args).status.success());
    assert_eq!(std::fs::read(&result).unwrap(), first);

    let eval = json_of(&vdt(&["eval-base-new", "--manifest", s(&manifest), "--checkpoint", s(&ckpt)]));
    for key in ["base_acc", "new_acc", "harmonic"] {
        assert!(eval[key].as_f64().is_some(), "{key}");
    }
    let zero = json_of(&vdt(&[
        "eval-base-new", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--beta", "0",
    ]));
    assert_eq!(zero["base_acc"], zero["zero_shot"]["base_acc"]);
    assert_eq!(zero["new_acc"], zero["zero_shot"]["new_acc"]);

    let out = vdt(&["analyze-attention", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--top", "2"]);
    assert!(out.status.success());
    let report = json_of(&out);
    assert_eq!(report["ranked"].as_array().unwrap().len(), 8);
    assert_eq!(report["top"].as_array().unwrap().len(), 2);
}

#[test]
fn tune_beta_and_timings() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let cfg = dir.path().join("train_config.json");
    std::fs::write(&cfg, r#"{"beta_grid": [0.0, 0.5], "epochs": 5}"#).unwrap();
    let ckpt = dir.path().join("a.vdta");
    let out = vdt(&[
        "train", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--config", s(&cfg), "--tune-beta",
        "--timings",
    ]);
    assert!(out.status.success());
    let v = json_of(&out);
    assert_eq!(v["beta_candidates"].as_array().unwrap().len(), 2);
    assert!(v["wall_clock"].as_f64().is_some());
}

#[test]
fn build_prompts_from_corpus_and_names() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = VdtCorpus::new("cub", "gpt-4");
    corpus.attribute_list = vec!["Beak: shape".into(), "Wings: colour".into()];
    corpus.classes.insert(
        "Green Heron".into(),
        vec!["It has a dagger-like beak.".into(), "Its wings are dark green.".into()],
    );
    let path = dir.path().join("corpus.json");
    corpus.save(&path).unwrap();
    let v = json_of(&vdt(&[
        "build-prompts", "--corpus", s(&path), "--template", "a photo of a {classname}, a type of bird. {sentence}",
    ]));
    assert_eq!(
        v["classes"]["Green Heron"]["prompts"][0],
        "a photo of a Green Heron, a type of bird. It has a dagger-like beak."
    );

    let names = dir.path().join("names.txt");
    std::fs::write(&names, "Green Heron\nBlue Jay\n").unwrap();
    let v = json_of(&vdt(&[
        "build-prompts", "--classes", s(&names), "--dataset-id", "cub", "--template", "a photo of a {classname}.",
    ]));
    assert_eq!(v["classes"]["Blue Jay"]["prompts"][0], "a photo of a Blue Jay.");

    let bad = vdt(&["build-prompts", "--corpus", s(&path), "--template", "no slots"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(json_of(&bad)["error"], "BadTemplate");
}

#[test]
fn gen_vdt_needs_credentials() {
    let dir = tempfile::tempdir().unwrap();
    let names = dir.path().join("names.txt");
    std::fs::write(&names, "Green Heron\n").unwrap();
    let endpoint = dir.path().join("endpoint.json");
    std::fs::write(&endpoint, r#"{"auth_env": "VDT_CLI_TEST_UNSET_TOKEN"}"#).unwrap();
    let out = vdt(&[
        "gen-vdt", "--classes", s(&names), "--dataset-id", "cub", "--endpoint", s(&endpoint),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json_of(&out)["error"], "MissingCredential");
}
