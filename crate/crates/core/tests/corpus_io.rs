use std::fs;
use std::path::Path;

use tracebench_core::corpus::{build_queries, load_dataset, save_dataset, CorpusError};
use tracebench_core::synthetic;

fn write(dir: &Path, rel: &str, text: &str) {
    let path = dir.join(rel);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

/// 3 parents, 4 children, 5 links.
fn small(dir: &Path) {
    write(
        dir,
        "dataset.json",
        r#"{"name": "small", "parents_dir": "hlr", "children_dir": "llr", "links_file": "trace.csv"}"#,
    );
    for id in ["SRS-1", "SRS-2", "SRS-14"] {
        write(dir, &format!("hlr/{id}.txt"), &format!("Requirement {id} text."));
    }
    for id in ["UC1", "UC2", "UC11", "UC3"] {
        write(dir, &format!("llr/{id}.txt"), &format!("Design element {id}.\n"));
    }
    write(
        dir,
        "trace.csv",
        "parent_id,child_id\nSRS-1,UC1\nSRS-1,UC2\nSRS-2,UC11\n SRS-14 , UC3 \nSRS-14,UC1\n",
    );
}

#[test]
fn loads_counts_and_queries() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.name(), "small");
    assert_eq!((ds.parents().len(), ds.children().len(), ds.true_links().len()), (3, 4, 5));
    assert!(ds.is_true_link("SRS-14", "UC3"));
    assert_eq!(ds.child("UC2").unwrap().body(), "Design element UC2.\n");

    let queries = build_queries(&ds, &["SRS-14", "SRS-1"]).unwrap();
    let ids: Vec<&str> = queries[0].candidate_ids().collect();
    assert_eq!(ids, ["UC1", "UC11", "UC2", "UC3"]);
    assert_eq!(queries.iter().map(|q| q.candidates.len()).sum::<usize>(), 8);
}

#[test]
fn save_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let ds = load_dataset(dir.path()).unwrap();
    let out = dir.path().join("copy");
    save_dataset(&ds, &out).unwrap();
    assert_eq!(load_dataset(&out).unwrap(), ds);
}

#[test]
fn summarized_round_trip_keeps_originals() {
    let ds = synthetic::generate(&synthetic::DRONOLOGY_PL, 1).unwrap();
    let bodies = [("C-001".to_string(), "Short summary.".to_string())].into_iter().collect();
    let summarized = ds.with_child_bodies(&bodies).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&summarized, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, summarized);
    assert_eq!(back.original_bodies()["C-001"], ds.child("C-001").unwrap().body());
}

#[test]
fn missing_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(CorpusError::MissingDescriptor(_))));
}

#[test]
fn dangling_link() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    write(dir.path(), "trace.csv", "parent_id,child_id\nSRS-1,X9\n");
    match load_dataset(dir.path()) {
        Err(CorpusError::DanglingLinkReference { parent_id, child_id }) => {
            assert_eq!((parent_id.as_str(), child_id.as_str()), ("SRS-1", "X9"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn empty_body() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    write(dir.path(), "llr/UC3.txt", " \n\t");
    assert!(matches!(load_dataset(dir.path()), Err(CorpusError::EmptyBody(id)) if id == "UC3"));
}

#[test]
fn duplicate_link_row() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    write(dir.path(), "trace.csv", "parent_id,child_id\nSRS-1,UC1\nSRS-1,UC1\n");
    assert!(matches!(load_dataset(dir.path()), Err(CorpusError::DuplicateLink { .. })));
}

#[test]
fn malformed_links_file() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    write(dir.path(), "trace.csv", "parent_id,child_id\nSRS-1\n");
    assert!(matches!(load_dataset(dir.path()), Err(CorpusError::MalformedLinks { .. })));
}

#[test]
fn bundled_fixtures_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let cm1 = load_dataset(root.join("cm1-synthetic/dataset")).unwrap();
    assert_eq!(cm1.children().len(), 53);
    let links = load_dataset(root.join("cm1-links/dataset")).unwrap();
    assert_eq!(links.true_links().len(), 4);
    assert!(!links.is_true_link("HLR-4", "LLR-4"));
}
