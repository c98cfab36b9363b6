mod common;

use std::path::Path;
use std::process::{Command, Output};

fn coevo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coevo"))
        .args(args)
        .env("COEVO_CACHE_DIR", common::cache_dir())
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_lists_subcommands() {
    let o = coevo(&["--help"]);
    assert!(o.status.success());
    for cmd in ["run", "resume", "eval", "make-corpus"] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
}

#[test]
fn bad_arguments_fail() {
    assert!(!coevo(&["run"]).status.success());
    assert!(!coevo(&["run", "--corpus-subject", "subject-00", "--stage-until", "nowhere"]).status.success());
    assert!(!coevo(&["run", "--corpus-subject", "no-such-subject", "--workspace", "/nonexistent/ws"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[subject]\ncorpus_subject = \"subject-00\"\nseed = 1\nfoo = 2\n").unwrap();
    let o = coevo(&["run", "--config", cfg.to_str().unwrap(), "--workspace", dir.path().join("ws").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn make_corpus_writes_views_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let o = coevo(&["make-corpus", "--out", out.to_str().unwrap(), "--size", "16"]);
    assert!(o.status.success());
    let index: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("subjects.json")).unwrap()).unwrap();
    let subjects = index.as_array().unwrap();
    assert_eq!(subjects.len(), 32);
    for v in subjects[0]["views"].as_array().unwrap() {
        assert!(out.join(v.as_str().unwrap()).exists());
    }
}

#[test]
fn run_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let ws_s = ws.to_str().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    let o = coevo(&["run", "--config", config.to_str().unwrap(), "--workspace", ws_s, "--stage-until", "multiview_lift"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("multiview_lift"));
    assert!(!stdout(&o).contains("reconstruction"));

    let o = coevo(&["resume", "--workspace", ws_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ws.join("reconstruction/mesh.ply").exists());

    let o = coevo(&["eval", "--workspace", ws_s, "--against", ws_s, "--judge", "stub", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("gaussians") && text.contains("mesh"), "{text}");
    assert!(ws.join("eval").read_dir().unwrap().count() > 0);
}
