use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_catbn");

fn catbn(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("CATBN_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = catbn(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn help_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let pages: [(&str, &[&str]); 7] = [
        ("help.txt", &["--help"]),
        ("help_generate.txt", &["generate", "--help"]),
        ("help_train.txt", &["train", "--help"]),
        ("help_evaluate.txt", &["evaluate", "--help"]),
        ("help_simulate.txt", &["simulate", "--help"]),
        ("help_serve.txt", &["serve", "--help"]),
        ("help_blueprint.txt", &["blueprint", "--help"]),
    ];
    for (file, args) in pages {
        let text = ok(dir.path(), args);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(golden(file), &text).unwrap();
        }
        let expected = std::fs::read_to_string(golden(file)).unwrap();
        assert_eq!(text, expected, "{file} is out of date (rerun with UPDATE_GOLDEN=1)");
    }
}

fn small_dataset(dir: &Path) {
    ok(dir, &["generate", "--out", "d.csv", "--truth-model", "b3", "--students", "40", "--seed", "3"]);
}

#[test]
fn train_twice_gives_identical_networks() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let a = ok(dir.path(), &["train", "--model", "b3", "--data", "d.csv", "--seed", "4"]);
    let b = ok(dir.path(), &["train", "--model", "b3", "--data", "d.csv", "--seed", "4"]);
    assert_eq!(a, b);
    let net = catbn::Network::from_json(&a).unwrap();
    assert!(net.is_valid());
    let c = ok(dir.path(), &["train", "--model", "b3", "--data", "d.csv", "--seed", "5"]);
    assert_ne!(a, c);
}

#[test]
fn evaluate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let args = ["evaluate", "--data", "d.csv", "--models", "b2,b3", "--folds", "4", "--max-steps", "4", "--seed", "7"];
    ok(dir.path(), &[&args[..], &["--out", "rep"]].concat());
    for f in ["sr_curves.csv", "occurrence_b2.csv", "occurrence_b3.csv", "sparsity.csv", "manifest.json"] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
    let sr = std::fs::read_to_string(dir.path().join("rep/sr_curves.csv")).unwrap();
    assert!(sr.starts_with("model,step,sr\nb2,0,"));
    let sp = std::fs::read_to_string(dir.path().join("rep/sparsity.csv")).unwrap();
    assert!(sp.starts_with("model,azt,as\n"));
}

#[test]
fn simulate_transcript_follows_schema() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(dir.path(), &["train", "--model", "b2", "--data", "d.csv", "--out", "b2.json"]);
    let text = ok(dir.path(), &["simulate", "--network", "b2.json", "--data", "d.csv", "--student", "s0002", "--max-questions", "5"]);
    assert_eq!(text.lines().count(), 5);
    for (i, line) in text.lines().enumerate() {
        let rec: catbn::session::TranscriptRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.step, i + 1);
        assert!(rec.answer == 1 || rec.answer == 2);
        assert!(rec.ig >= -1e-9);
        let p = &rec.skill_posteriors["S1"];
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let keyed = ok(
        dir.path(),
        &["simulate", "--network", "b2.json", "--answers", "P01a=2,P01b=1,P19=2", "--entropy-below", "0.01"],
    );
    assert!(keyed.lines().count() <= 3);
}

fn manifest(dir: &Path, extra: &[&str], env: &[(&str, &str)]) -> serde_json::Value {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(["evaluate", "--data", "d.csv", "--max-steps", "2", "--out", "rep", "--models", "b2"]);
    cmd.args(extra);
    for (k, _) in std::env::vars() {
        if k.starts_with("CATBN_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&std::fs::read_to_string(dir.join("rep/manifest.json")).unwrap()).unwrap()
}

#[test]
fn flags_override_env_which_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    std::fs::write(dir.path().join("catbn.toml"), "seed = 1\nfolds = 3\nem_max_iterations = 5\n").unwrap();
    let cfg = ["--config", "catbn.toml"];
    let m = manifest(dir.path(), &cfg, &[]);
    assert_eq!((m["seed"].as_u64(), m["folds"].as_u64()), (Some(1), Some(3)));
    assert_eq!(m["em"]["max_iterations"].as_u64(), Some(5));
    let m = manifest(dir.path(), &cfg, &[("CATBN_SEED", "2"), ("CATBN_FOLDS", "4")]);
    assert_eq!((m["seed"].as_u64(), m["folds"].as_u64()), (Some(2), Some(4)));
    let m = manifest(dir.path(), &[&cfg[..], &["--seed", "3"]].concat(), &[("CATBN_SEED", "2")]);
    assert_eq!(m["seed"].as_u64(), Some(3));
    let m = manifest(dir.path(), &[], &[("CATBN_CONFIG", "catbn.toml")]);
    assert_eq!(m["folds"].as_u64(), Some(3));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let cases: [&[&str]; 5] = [
        &["train", "--model", "b3", "--data", "missing.csv"],
        &["train", "--model", "n3", "--data", "d.csv"],
        &["train", "--model", "zz", "--data", "d.csv"],
        &["evaluate", "--data", "d.csv", "--out", "rep", "--bogus"],
        &["simulate", "--network", "nope.json", "--answers", "P01a=1"],
    ];
    for args in cases {
        let out = catbn(dir.path(), args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
    std::fs::write(dir.path().join("bad.toml"), "sed = 1\n").unwrap();
    let out = catbn(dir.path(), &["--config", "bad.toml", "blueprint"]);
    assert!(!out.status.success());
}

#[test]
fn blueprint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["blueprint", "--out", "bp.json"]);
    let bp = catbn::zoo::TestBlueprint::from_json(&std::fs::read_to_string(dir.path().join("bp.json")).unwrap()).unwrap();
    assert_eq!(bp, catbn::zoo::TestBlueprint::reference());
    small_dataset(dir.path());
    ok(dir.path(), &["train", "--model", "b2e", "--data", "d.csv", "--blueprint", "bp.json", "--em-max-iterations", "3", "--out", "e.json"]);
}
