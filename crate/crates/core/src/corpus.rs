//! Traceability datasets: artifacts, ground-truth links and trace queries.
//!
//! On disk a dataset is a directory holding a `dataset.json` descriptor, one
//! UTF-8 `<id>.txt` file per artifact in the parent and child directories,
//! and a two-column `parent_id,child_id` links file with a header row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DESCRIPTOR_FILE: &str = "dataset.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no {DESCRIPTOR_FILE} found in {0}")]
    MissingDescriptor(PathBuf),
    #[error("invalid descriptor {path}: {source}")]
    InvalidDescriptor {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed links file {path}: {message}")]
    MalformedLinks { path: PathBuf, message: String },
    #[error("link ({parent_id}, {child_id}) references an unknown artifact")]
    DanglingLinkReference { parent_id: String, child_id: String },
    #[error("duplicate link ({parent_id}, {child_id})")]
    DuplicateLink { parent_id: String, child_id: String },
    #[error("duplicate artifact id {0:?}")]
    DuplicateArtifactId(String),
    #[error("artifact {0:?} has an empty body")]
    EmptyBody(String),
    #[error("invalid artifact id {0:?}: ids must be non-empty, untrimmed-whitespace free, and contain no commas, angle brackets, path separators or control characters")]
    InvalidArtifactId(String),
    #[error("unknown parent artifact {0:?}")]
    UnknownParent(String),
    #[error("unknown child artifact {0:?}")]
    UnknownChild(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Parent,
    Child,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Parent => "parent",
            Layer::Child => "child",
        })
    }
}

/// Checks the id rules that let an id round-trip through comma-delimited
/// ranking responses, tag-delimited prompts and `<id>.txt` file names.
pub fn validate_id(id: &str) -> Result<(), CorpusError> {
    let bad_char = |c: char| {
        matches!(c, ',' | '<' | '>' | '/' | '\\') || c.is_control()
    };
    if id.is_empty() || id.trim() != id || id.chars().any(bad_char) || id == "." || id == ".." {
        return Err(CorpusError::InvalidArtifactId(id.to_string()));
    }
    Ok(())
}

/// One software artifact. Bodies are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    id: String,
    layer: Layer,
    kind: String,
    body: String,
}

impl Artifact {
    pub fn new(
        id: impl Into<String>,
        layer: Layer,
        kind: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        validate_id(&id)?;
        let body = body.into();
        if body.trim().is_empty() {
            return Err(CorpusError::EmptyBody(id));
        }
        Ok(Self {
            id,
            layer,
            kind: kind.into(),
            body,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Same artifact with a different body, re-validated.
    pub fn with_body(&self, body: impl Into<String>) -> Result<Self, CorpusError> {
        Artifact::new(self.id.clone(), self.layer, self.kind.clone(), body)
    }
}

/// A (parent, child) candidate link.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkPair {
    pub parent: String,
    pub child: String,
}

impl LinkPair {
    pub fn new(parent: impl Into<String>, child: impl Into<String>) -> Self {
        Self {
            parent: parent.into(),
            child: child.into(),
        }
    }
}

impl fmt::Display for LinkPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.parent, self.child)
    }
}

/// A two-layer traceability dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceDataset {
    name: String,
    parent_kind: String,
    child_kind: String,
    child_is_code: bool,
    parents: BTreeMap<String, Artifact>,
    children: BTreeMap<String, Artifact>,
    true_links: BTreeSet<LinkPair>,
    /// Pre-summarization bodies of children whose text was replaced.
    original_bodies: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Descriptor {
    name: String,
    parents_dir: String,
    children_dir: String,
    links_file: String,
    #[serde(default = "default_parent_kind")]
    parent_kind: String,
    #[serde(default = "default_child_kind")]
    child_kind: String,
    #[serde(default)]
    child_is_code: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    originals_dir: Option<String>,
}

fn default_parent_kind() -> String {
    "parent".to_string()
}

fn default_child_kind() -> String {
    "child".to_string()
}

/// Layer-level metadata for [`TraceDataset::new`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub parent_kind: String,
    pub child_kind: String,
    pub child_is_code: bool,
}

impl DatasetMeta {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            parent_kind: default_parent_kind(),
            child_kind: default_child_kind(),
            child_is_code: false,
        }
    }
}

impl TraceDataset {
    /// Builds and validates a dataset. Artifacts are re-layered to match the
    /// side they are passed on.
    pub fn new(
        meta: DatasetMeta,
        parents: impl IntoIterator<Item = (String, String)>,
        children: impl IntoIterator<Item = (String, String)>,
        links: impl IntoIterator<Item = LinkPair>,
    ) -> Result<Self, CorpusError> {
        let parents = collect_layer(parents, Layer::Parent, &meta.parent_kind)?;
        let children = collect_layer(children, Layer::Child, &meta.child_kind)?;
        let mut true_links = BTreeSet::new();
        for link in links {
            if !parents.contains_key(&link.parent) || !children.contains_key(&link.child) {
                return Err(CorpusError::DanglingLinkReference {
                    parent_id: link.parent,
                    child_id: link.child,
                });
            }
            if true_links.contains(&link) {
                return Err(CorpusError::DuplicateLink {
                    parent_id: link.parent,
                    child_id: link.child,
                });
            }
            true_links.insert(link);
        }
        Ok(Self {
            name: meta.name,
            parent_kind: meta.parent_kind,
            child_kind: meta.child_kind,
            child_is_code: meta.child_is_code,
            parents,
            children,
            true_links,
            original_bodies: BTreeMap::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn child_is_code(&self) -> bool {
        self.child_is_code
    }

    pub fn parents(&self) -> impl ExactSizeIterator<Item = &Artifact> {
        self.parents.values()
    }

    /// Children in canonical (ascending id) order.
    pub fn children(&self) -> impl ExactSizeIterator<Item = &Artifact> {
        self.children.values()
    }

    pub fn parent(&self, id: &str) -> Option<&Artifact> {
        self.parents.get(id)
    }

    pub fn child(&self, id: &str) -> Option<&Artifact> {
        self.children.get(id)
    }

    pub fn true_links(&self) -> &BTreeSet<LinkPair> {
        &self.true_links
    }

    pub fn is_true_link(&self, parent: &str, child: &str) -> bool {
        self.true_links.contains(&LinkPair::new(parent, child))
    }

    /// Number of true links per parent, including parents with none.
    pub fn link_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> =
            self.parents.keys().map(|id| (id.as_str(), 0)).collect();
        for link in &self.true_links {
            *counts.get_mut(link.parent.as_str()).expect("validated link") += 1;
        }
        counts
    }

    pub fn original_bodies(&self) -> &BTreeMap<String, String> {
        &self.original_bodies
    }

    /// Replaces child bodies, keeping the first-seen original of each for audit.
    pub fn with_child_bodies(
        &self,
        bodies: &BTreeMap<String, String>,
    ) -> Result<TraceDataset, CorpusError> {
        let mut next = self.clone();
        for (id, body) in bodies {
            let current = next
                .children
                .get(id)
                .ok_or_else(|| CorpusError::UnknownChild(id.clone()))?;
            let replaced = current.with_body(body.clone())?;
            next.original_bodies
                .entry(id.clone())
                .or_insert_with(|| current.body.clone());
            next.children.insert(id.clone(), replaced);
        }
        Ok(next)
    }
}

fn collect_layer(
    items: impl IntoIterator<Item = (String, String)>,
    layer: Layer,
    kind: &str,
) -> Result<BTreeMap<String, Artifact>, CorpusError> {
    let mut out = BTreeMap::new();
    for (id, body) in items {
        let artifact = Artifact::new(id, layer, kind, body)?;
        if out.contains_key(artifact.id()) {
            return Err(CorpusError::DuplicateArtifactId(artifact.id));
        }
        out.insert(artifact.id.clone(), artifact);
    }
    Ok(out)
}

/// Loads and validates the dataset rooted at `root`.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<TraceDataset, CorpusError> {
    let root = root.as_ref();
    let descriptor_path = root.join(DESCRIPTOR_FILE);
    if !descriptor_path.is_file() {
        return Err(CorpusError::MissingDescriptor(root.to_path_buf()));
    }
    let raw = fs::read_to_string(&descriptor_path).map_err(io_err(&descriptor_path))?;
    let desc: Descriptor =
        serde_json::from_str(&raw).map_err(|source| CorpusError::InvalidDescriptor {
            path: descriptor_path.clone(),
            source,
        })?;

    let parents = read_artifact_dir(&root.join(&desc.parents_dir))?;
    let children = read_artifact_dir(&root.join(&desc.children_dir))?;
    let links = read_links(&root.join(&desc.links_file))?;

    let meta = DatasetMeta {
        name: desc.name,
        parent_kind: desc.parent_kind,
        child_kind: desc.child_kind,
        child_is_code: desc.child_is_code,
    };
    let mut dataset = TraceDataset::new(meta, parents, children, links)?;
    if let Some(dir) = desc.originals_dir {
        for (id, body) in read_artifact_dir(&root.join(dir))? {
            if !dataset.children.contains_key(&id) {
                return Err(CorpusError::UnknownChild(id));
            }
            dataset.original_bodies.insert(id, body);
        }
    }
    Ok(dataset)
}

fn read_artifact_dir(dir: &Path) -> Result<Vec<(String, String)>, CorpusError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CorpusError::InvalidArtifactId(path.display().to_string()))?
            .to_string();
        let body = fs::read_to_string(&path).map_err(io_err(&path))?;
        out.push((id, body));
    }
    out.sort();
    Ok(out)
}

fn read_links(path: &Path) -> Result<Vec<LinkPair>, CorpusError> {
    let malformed = |message: String| CorpusError::MalformedLinks {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut links = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if record.len() != 2 {
            return Err(malformed(format!(
                "expected 2 columns, found {} in {:?}",
                record.len(),
                record
            )));
        }
        links.push(LinkPair::new(&record[0], &record[1]));
    }
    Ok(links)
}

/// Writes `dataset` under `root` in the layout [`load_dataset`] reads.
pub fn save_dataset(dataset: &TraceDataset, root: impl AsRef<Path>) -> Result<(), CorpusError> {
    let root = root.as_ref();
    let desc = Descriptor {
        name: dataset.name.clone(),
        parents_dir: "parents".into(),
        children_dir: "children".into(),
        links_file: "links.csv".into(),
        parent_kind: dataset.parent_kind.clone(),
        child_kind: dataset.child_kind.clone(),
        child_is_code: dataset.child_is_code,
        originals_dir: (!dataset.original_bodies.is_empty()).then(|| "originals".into()),
    };
    write_artifact_dir(
        &root.join(&desc.parents_dir),
        dataset.parents.values().map(|a| (a.id(), a.body())),
    )?;
    write_artifact_dir(
        &root.join(&desc.children_dir),
        dataset.children.values().map(|a| (a.id(), a.body())),
    )?;
    if let Some(dir) = &desc.originals_dir {
        write_artifact_dir(
            &root.join(dir),
            dataset
                .original_bodies
                .iter()
                .map(|(id, body)| (id.as_str(), body.as_str())),
        )?;
    }

    let mut links = String::from("parent_id,child_id\n");
    for link in &dataset.true_links {
        links.push_str(&link.parent);
        links.push(',');
        links.push_str(&link.child);
        links.push('\n');
    }
    let links_path = root.join(&desc.links_file);
    fs::write(&links_path, links).map_err(io_err(&links_path))?;

    let descriptor_path = root.join(DESCRIPTOR_FILE);
    let mut json = serde_json::to_string_pretty(&desc).expect("descriptor serializes");
    json.push('\n');
    fs::write(&descriptor_path, json).map_err(io_err(&descriptor_path))
}

fn write_artifact_dir<'a>(
    dir: &Path,
    items: impl Iterator<Item = (&'a str, &'a str)>,
) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (id, body) in items {
        let path = dir.join(format!("{id}.txt"));
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

/// One parent with its ordered candidate children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceQuery {
    pub parent: Artifact,
    pub candidates: Vec<Artifact>,
    pub relevant_ids: BTreeSet<String>,
}

impl TraceQuery {
    pub fn candidate_ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(Artifact::id)
    }

    pub fn is_relevant(&self, child_id: &str) -> bool {
        self.relevant_ids.contains(child_id)
    }
}

/// One query per parent id, each listing every child in ascending id order.
pub fn build_queries<S: AsRef<str>>(
    dataset: &TraceDataset,
    parent_ids: &[S],
) -> Result<Vec<TraceQuery>, CorpusError> {
    parent_ids
        .iter()
        .map(|pid| {
            let pid = pid.as_ref();
            let parent = dataset
                .parent(pid)
                .ok_or_else(|| CorpusError::UnknownParent(pid.to_string()))?;
            let relevant_ids = dataset
                .true_links
                .iter()
                .filter(|l| l.parent == pid)
                .map(|l| l.child.clone())
                .collect();
            Ok(TraceQuery {
                parent: parent.clone(),
                candidates: dataset.children.values().cloned().collect(),
                relevant_ids,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TraceDataset {
        TraceDataset::new(
            DatasetMeta::new("small"),
            [("P1", "alpha"), ("P2", "beta"), ("P3", "gamma")]
                .map(|(a, b)| (a.to_string(), b.to_string())),
            [("C1", "one"), ("C2", "two"), ("C3", "three"), ("C4", "four")]
                .map(|(a, b)| (a.to_string(), b.to_string())),
            [
                ("P1", "C1"),
                ("P1", "C2"),
                ("P2", "C3"),
                ("P3", "C1"),
                ("P3", "C4"),
            ]
            .map(|(p, c)| LinkPair::new(p, c)),
        )
        .unwrap()
    }

    #[test]
    fn counts_echo_input() {
        let d = small();
        assert_eq!(d.parents().len(), 3);
        assert_eq!(d.children().len(), 4);
        assert_eq!(d.true_links().len(), 5);
    }

    #[test]
    fn rejects_bad_ids() {
        for id in ["", "a,b", "<x>", " a", "a/b", "a\nb"] {
            assert!(
                matches!(validate_id(id), Err(CorpusError::InvalidArtifactId(_))),
                "{id:?}"
            );
        }
        validate_id("SRS-14").unwrap();
        validate_id("UC 11").unwrap();
    }

    #[test]
    fn rejects_blank_body() {
        let err = Artifact::new("A", Layer::Parent, "req", "  \n\t").unwrap_err();
        assert!(matches!(err, CorpusError::EmptyBody(id) if id == "A"));
    }

    #[test]
    fn rejects_duplicate_ids_within_layer() {
        let err = TraceDataset::new(
            DatasetMeta::new("dup"),
            vec![("A".into(), "x".into()), ("A".into(), "y".into())],
            vec![("A".into(), "same id, other layer is fine".into())],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateArtifactId(id) if id == "A"));
    }

    #[test]
    fn rejects_dangling_and_duplicate_links() {
        let parents = || vec![("P".to_string(), "p".to_string())];
        let children = || vec![("C".to_string(), "c".to_string())];
        let err = TraceDataset::new(
            DatasetMeta::new("d"),
            parents(),
            children(),
            vec![LinkPair::new("P", "X9")],
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DanglingLinkReference { child_id, .. } if child_id == "X9"));
        let err = TraceDataset::new(
            DatasetMeta::new("d"),
            parents(),
            children(),
            vec![LinkPair::new("P", "C"), LinkPair::new("P", "C")],
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateLink { .. }));
    }

    #[test]
    fn queries_list_children_in_canonical_order() {
        let d = small();
        let qs = build_queries(&d, &["P3", "P2"]).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].parent.id(), "P3");
        assert_eq!(
            qs[0].candidate_ids().collect::<Vec<_>>(),
            ["C1", "C2", "C3", "C4"]
        );
        assert_eq!(
            qs[0].relevant_ids,
            BTreeSet::from(["C1".to_string(), "C4".to_string()])
        );
    }

    #[test]
    fn empty_parent_list_gives_no_queries() {
        assert!(build_queries::<&str>(&small(), &[]).unwrap().is_empty());
    }

    #[test]
    fn unknown_parent_rejected() {
        let err = build_queries(&small(), &["nope"]).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownParent(id) if id == "nope"));
    }

    #[test]
    fn parent_without_links_has_empty_relevant_set() {
        let d = TraceDataset::new(
            DatasetMeta::new("d"),
            vec![("P".into(), "p".into()), ("Q".into(), "q".into())],
            vec![("C".into(), "c".into())],
            vec![LinkPair::new("P", "C")],
        )
        .unwrap();
        let qs = build_queries(&d, &["Q"]).unwrap();
        assert!(qs[0].relevant_ids.is_empty());
        assert_eq!(d.link_counts()["Q"], 0);
    }

    #[test]
    fn child_body_replacement_keeps_originals() {
        let d = small();
        let bodies = BTreeMap::from([("C2".to_string(), "summary".to_string())]);
        let s = d.with_child_bodies(&bodies).unwrap();
        assert_eq!(s.child("C2").unwrap().body(), "summary");
        assert_eq!(s.original_bodies()["C2"], "two");
        // a second pass keeps the very first original
        let again = s
            .with_child_bodies(&BTreeMap::from([("C2".to_string(), "shorter".to_string())]))
            .unwrap();
        assert_eq!(again.original_bodies()["C2"], "two");
        assert_eq!(d.child("C2").unwrap().body(), "two");
    }
}
