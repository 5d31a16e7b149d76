use std::fs;
use std::path::PathBuf;

use petreg::{load_config, load_preset, preset_text, Error, PRESETS};
use tempfile::TempDir;

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s1_with(from: &str, to: &str) -> String {
    let text = preset_text("s1_no_mismatch").unwrap();
    assert!(text.contains(from), "{from}");
    text.replace(from, to)
}

#[test]
fn preset_files_load_like_the_bundled_copies() {
    let dir = TempDir::new().unwrap();
    for (name, text) in PRESETS {
        let p = write(&dir, &format!("{name}.toml"), text);
        let from_file = load_config(&p).unwrap();
        assert_eq!(from_file, load_preset(name).unwrap(), "{name}");
    }
}

#[test]
fn missing_file_is_a_parse_error_naming_the_file() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("absent.toml");
    match load_config(&p) {
        Err(Error::Parse { path, .. }) => assert!(path.ends_with("absent.toml"), "{path}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_file_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "empty.toml", "");
    assert!(matches!(load_config(&p), Err(Error::Parse { .. })));
}

#[test]
fn wrong_type_reports_the_key_path() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "bad.toml", &s1_with("h = 0.001", "h = \"fast\""));
    match load_config(&p) {
        Err(Error::Parse { path, .. }) => assert!(path.contains("run.h"), "{path}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_section_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = write(
        &dir,
        "extra.toml",
        &format!(
            "{}\n[tuning]\nfoo = 1\n",
            preset_text("s1_no_mismatch").unwrap()
        ),
    );
    match load_config(&p) {
        Err(Error::Parse { message, .. }) => assert!(message.contains("tuning"), "{message}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn step_must_divide_every_period() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "step.toml", &s1_with("h = 0.001", "h = 0.003"));
    assert!(matches!(load_config(&p), Err(Error::Config { .. })));
}

#[test]
fn missing_leader_link_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = preset_text("s1_no_mismatch").unwrap();
    let edges_start = text.find("edges = [").unwrap();
    let edges_end = edges_start + text[edges_start..].find(']').unwrap() + 1;
    let edges = &text[edges_start..edges_end];
    let pruned: String = edges
        .lines()
        .filter(|l| !l.contains("from = 0"))
        .collect::<Vec<_>>()
        .join("\n");
    let p = write(&dir, "orphan.toml", &text.replace(edges, &pruned));
    match load_config(&p) {
        Err(Error::Config { path, .. }) => assert!(path.starts_with("graph"), "{path}"),
        other => panic!("{other:?}"),
    }
}
