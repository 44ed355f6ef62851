use std::path::Path;
use std::process::{Command, Output};

fn kix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kix")).args(args).output().expect("spawn kix")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_variant_is_a_config_error() {
    let o = kix(&["train", "--quiet", "--set", "total_steps=10"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_key_is_a_config_error() {
    let o = kix(&["train", "--set", "variant=\"kix1\"", "--set", "no_such_key=1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_without_checkpoint_is_a_config_error() {
    let o = kix(&["eval", "--set", "variant=\"base\""]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("gone.csv");
    assert_eq!(code(&kix(&["compare", path(&gone)])), 3);
    let ck = dir.path().join("gone.kix");
    assert_eq!(code(&kix(&["eval", "--set", "variant=\"kix1\"", "--checkpoint", path(&ck)])), 3);
    assert_eq!(code(&kix(&["train", "--config", path(&dir.path().join("gone.toml"))])), 3);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("bad.kix");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    assert_eq!(code(&kix(&["eval", "--set", "variant=\"kix1\"", "--checkpoint", path(&ck)])), 3);
}

#[test]
fn inspect_graph_prints_both_graphs() {
    let o = kix(&["inspect-graph", "--set", "variant=\"kix1\"", "--set", "task=1"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.contains("instance graph") && s.contains("type graph"), "{s}");
}

#[test]
fn train_eval_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for variant in ["base", "kix1"] {
        let run = dir.path().join(variant);
        let v = format!("variant=\"{variant}\"");
        let o = kix(&["train", "--quiet", "--set", &v, "--set", "total_steps=1500", "--set", "eval_every=0", "--out", path(&run)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["config.toml", "train_log.csv", "checkpoint_final.kix"] {
            assert!(run.join(f).is_file(), "{variant}: missing {f}");
        }

        // the echoed config alone is enough to evaluate
        let log = dir.path().join(format!("{variant}.csv"));
        let ck = run.join("checkpoint_final.kix");
        let cfg = run.join("config.toml");
        let o = kix(&["eval", "--config", path(&cfg), "--set", "episodes=6", "--checkpoint", path(&ck), "--out", path(&log)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("6 episodes"));
        logs.push(log);
    }

    // a checkpoint of one variant cannot be read as another
    let ck = dir.path().join("base/checkpoint_final.kix");
    assert_ne!(code(&kix(&["eval", "--set", "variant=\"kix2\"", "--checkpoint", path(&ck)])), 0);

    let report = dir.path().join("report");
    let mut args = vec!["compare", "-k", "2", "--out", path(&report)];
    args.extend(logs.iter().map(|p| path(p)));
    let o = kix(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("base") && s.contains("kix1"), "{s}");
    assert!(std::fs::read_dir(&report).unwrap().count() > 0);
}
