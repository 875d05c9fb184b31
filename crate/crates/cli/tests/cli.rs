use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cm1-synthetic")
}

fn tracebench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracebench")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn dataset() -> String {
    fixture().join("dataset").display().to_string()
}

/// Fixture config with absolute paths and one line swapped.
fn patched_config(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(fixture().join("experiment.toml")).unwrap();
    assert!(text.contains(from));
    let text = text
        .replace("dataset = \"dataset\"", &format!("dataset = {:?}", dataset()))
        .replace(
            "archive = \"replay.jsonl\"",
            &format!("archive = {:?}", fixture().join("replay.jsonl").display().to_string()),
        )
        .replace(from, to);
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn sample_prints_five_labelled_parents() {
    let text = stdout(&tracebench(&["sample", "--dataset", &dataset(), "--seed", "7"]));
    let labels: Vec<&str> = text.lines().map(|l| l.split(':').next().unwrap()).collect();
    assert_eq!(labels, ["min", "med", "med", "med", "max"]);
    assert!(text.lines().all(|l| l.split_once(':').unwrap().1.starts_with("P-")));
    assert_eq!(text, stdout(&tracebench(&["sample", "--dataset", &dataset(), "--seed", "7"])));
}

#[test]
fn prompts_list_and_show() {
    let text = stdout(&tracebench(&["prompts", "list"]));
    assert_eq!(text.lines().count(), 14);
    assert!(text.lines().any(|l| l.starts_with("cot-v1\ttagged\t")));
    let shown = stdout(&tracebench(&["prompts", "show", "cm1-q1"]));
    assert!(shown.contains("{source_body}"));
    let missing = tracebench(&["prompts", "show", "nope"]);
    assert!(!missing.status.success());
}

#[test]
fn vsm_ranking_is_csv_per_query() {
    let text = stdout(&tracebench(&["rank", "--dataset", &dataset(), "--strategy", "vsm", "--seed", "7"]));
    let blocks: Vec<&str> = text.split("# ").filter(|b| !b.is_empty()).collect();
    assert_eq!(blocks.len(), 5);
    for block in blocks {
        let mut lines = block.lines();
        assert!(lines.next().unwrap().starts_with("P-"));
        assert_eq!(lines.next(), Some("rank,child_id,score"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 53);
        assert!(rows[0].starts_with("1,C-"));
    }
}

#[test]
fn run_twice_gives_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture().join("experiment.toml").display().to_string();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub).display().to_string();
        stdout(&tracebench(&["run", "--config", &config, "--output-dir", &out]));
    }
    let a = fs::read(dir.path().join("a/report.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/report.json")).unwrap());

    let report = dir.path().join("a/report.json").display().to_string();
    let tables = stdout(&tracebench(&["report", "--report", &report]));
    assert!(tables.contains("multi-question-v1 (votes >= 3)"));

    let outcomes = dir.path().join("a/classification-cm1-q1.jsonl").display().to_string();
    let eval = stdout(&tracebench(&["eval", "--dataset", &dataset(), "--outcomes", &outcomes]));
    let value: serde_json::Value = serde_json::from_str(&eval).unwrap();
    let counts = &value["classification"][0]["counts"];
    let total: u64 = ["tp", "tn", "fp", "fn"].iter().map(|k| counts[k].as_u64().unwrap()).sum();
    assert_eq!(total, 265);
}

#[test]
fn unknown_prompt_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = patched_config(dir.path(), "prompt = \"cm1-q4\"", "prompt = \"cm1-q99\"");
    let out = tracebench(&["run", "--config", &config.display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classification[1].prompt"));
}

#[test]
fn replay_miss_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = patched_config(dir.path(), "max_output_tokens = 1024", "max_output_tokens = 512");
    let out = tracebench(&["run", "--config", &config.display().to_string()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
