use std::path::Path;
use std::process::{Command, Output};

fn binorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binorm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).to_string_lossy().into_owned()
}

#[test]
fn count_params_small_language_model() {
    let o = binorm(&["count-params", "--config", &config("blm-small.json"), "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let total = v["total"].as_f64().unwrap();
    assert!((total - 154.4e6).abs() / 154.4e6 < 0.005, "{total}");
    // A bare preset name resolves too.
    let text = stdout(&binorm(&["count-params", "--config", "blm-small.json"]));
    assert!(text.lines().last().unwrap().ends_with("154406714"), "{text}");
}

#[test]
fn gradcheck_passes_with_exit_zero() {
    let o = binorm(&["gradcheck", "--seed", "7", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.len() > 15);
    assert!(checks.iter().all(|c| c["max_rel_error"].as_f64().unwrap() < 1e-3));
}

#[test]
fn empty_infer_input_is_a_one_line_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = binorm(&["train", "--config", "tiny-blm", "--data", "synthetic:tokens,n=32", "--seed", "1", "--epochs", "1", "--batch", "8", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, b"").unwrap();
    let o = binorm(&["infer", "--model", out.join("model.bnm").to_str().unwrap(), "--input", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("empty"));
}

#[test]
fn identical_runs_write_identical_reports_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = binorm(&["train", "--config", &config("tiny-bcvnn.json"), "--data", "synthetic:images,n=64", "--seed", seed, "--epochs", "2", "--batch", "8", "--out", out.to_str().unwrap(), "--json"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        (read("report.jsonl"), read("model.bnm"), stdout(&o).lines().count())
    };
    let a = run("a", "4");
    let b = run("b", "4");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, 3);
    assert_ne!(run("c", "5").0, a.0);

    // Exporting the checkpoint reproduces the packed file written by train.
    let o = binorm(&["export", "--checkpoint", dir.path().join("a/model.bnc").to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("x/model.bnm")).unwrap(), a.1);
}

#[test]
fn packed_and_float_models_evaluate_alike() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = binorm(&["train", "--config", "tiny-blm", "--data", "synthetic:periodic,n=64", "--seed", "2", "--epochs", "2", "--batch", "8", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let eval = |file: &str| {
        let o = binorm(&["eval", "--model", out.join(file).to_str().unwrap(), "--data", "synthetic:periodic,n=32", "--json"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["evaluation"].clone()
    };
    assert_eq!(eval("model.bnc"), eval("model.bnm"));
}

#[test]
fn exit_codes() {
    assert_eq!(binorm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(binorm(&["train", "--config", "tiny-blm", "--data", "synthetic:tokens"]).status.code(), Some(1));
    assert_eq!(binorm(&["count-params", "--config", "no-such-model"]).status.code(), Some(1));
    assert_eq!(binorm(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.bnm");
    std::fs::write(&garbage, b"BNM1 not really a model").unwrap();
    let o = binorm(&["eval", "--model", garbage.to_str().unwrap(), "--data", "synthetic:tokens"]);
    assert_eq!(o.status.code(), Some(2));

    // A float model driven with an absurd learning rate overflows; the run
    // stops with exit 3 and keeps a checkpoint.
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config("tiny-bcvnn.json")).unwrap()).unwrap();
    cfg["model"]["binary"] = false.into();
    let cfg_path = dir.path().join("standard.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = dir.path().join("nan");
    let o = binorm(&["train", "--config", cfg_path.to_str().unwrap(), "--data", "synthetic:images,n=64", "--seed", "1", "--epochs", "2", "--lr", "1e38", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join("model.bnc").is_file());
}

#[test]
fn infer_reads_dataset_files_and_token_text() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = binorm(&["train", "--config", "tiny-bcvnn", "--data", "synthetic:images,n=32", "--seed", "3", "--epochs", "1", "--batch", "8", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let data = binorm::data::parse_synthetic("synthetic:images,n=8", 9).unwrap();
    let file = dir.path().join("images.bnd");
    binorm::data::write_dataset(&data, &file).unwrap();
    let o = binorm(&["infer", "--model", out.join("model.bnm").to_str().unwrap(), "--input", file.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let preds = v["predictions"].as_array().unwrap();
    assert_eq!(preds.len(), 8);
    for p in preds {
        let sum: f64 = p["probabilities"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }
}
