use std::process::{Command, Output};

fn eegssm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegssm")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    eegssm(args).status.code().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--data", "x"]), 1);
    assert_eq!(code(&["gradcheck", "--variant", "recurrent"]), 1);
    assert_eq!(code(&["synth", "--out", "unused", "--subjects", "4"]), 1);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = dir.path().join("m.json");
    assert_eq!(code(&["train", "--data", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
}

#[test]
fn synth_featurize_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    assert_eq!(code(&["synth", "--out", &p("d"), "--subjects", "9", "--duration-s", "10", "--rate", "125"]), 0);
    assert_eq!(code(&["featurize", "--data", &p("d"), "--out", &p("f.csv"), "--channels", "6"]), 0);
    let csv = std::fs::read_to_string(p("f.csv")).unwrap();
    assert!(csv.starts_with("subject_id,label,segment,channel,band,log_power"));
    assert_eq!(csv.lines().count(), 1 + 9 * 5 * 6 * 5);
    let train = ["train", "--data", &p("d"), "--variant", "spectral", "--epochs", "2", "--quiet", "--out", &p("m.json")];
    assert_eq!(code(&train), 0);
    let history = std::fs::read_to_string(p("m.json.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert_eq!(code(&["eval", "--ckpt", &p("m.json"), "--data", &p("d"), "--out", &p("e.json")]), 0);
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("e.json")).unwrap()).unwrap();
    assert!(metrics["accuracy"].as_f64().unwrap() <= 1.0);
    assert_eq!(code(&["eval", "--ckpt", &p("m.json"), "--data", &p("d"), "--split", "dev"]), 1);
}

#[test]
fn divergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    assert_eq!(code(&["synth", "--out", &p("d"), "--subjects", "9", "--duration-s", "10", "--rate", "125"]), 0);
    let out = eegssm(&["train", "--data", &p("d"), "--variant", "spectral", "--epochs", "5", "--lr", "1e300", "--quiet", "--out", &p("m.json")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes() {
    let out = eegssm(&["gradcheck"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
