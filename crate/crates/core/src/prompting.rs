//! Prompt templates and rendering.
//!
//! Templates are plain text files with a small front-matter header:
//!
//! ```text
//! ---
//! id: cm1-q1
//! schema: yes-no            # yes-no | tagged | ranked-ids
//! tags:                     # comma separated, tagged schema only
//! description: one line
//! ---
//! body with {source_body}, {target_body} or {artifact_list}
//! ```
//!
//! The built-in catalog lives in `prompts/` next to this crate and is
//! embedded at compile time.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Artifact;

pub const SOURCE_BODY: &str = "source_body";
pub const TARGET_BODY: &str = "target_body";
pub const ARTIFACT_LIST: &str = "artifact_list";

const KNOWN_PLACEHOLDERS: [&str; 3] = [SOURCE_BODY, TARGET_BODY, ARTIFACT_LIST];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {id}: {message}")]
    InvalidTemplate { id: String, message: String },
    #[error("malformed template file: {0}")]
    MalformedFile(String),
    #[error("template {id} has schema {schema} which cannot be used to {operation}")]
    SchemaMismatch {
        id: String,
        schema: String,
        operation: &'static str,
    },
    #[error("ranking prompt needs at least one candidate")]
    EmptyCandidates,
    #[error("unknown prompt id {0:?}")]
    UnknownPrompt(String),
    #[error("reading templates: {0}")]
    Io(String),
}

/// What shape the model is asked to answer in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseSchema {
    YesNo,
    /// Free text sections enclosed in `<tag></tag>`. Zero tags means a
    /// free-text answer such as a code summary.
    TaggedSections(Vec<String>),
    RankedIdList,
}

impl ResponseSchema {
    pub fn name(&self) -> &'static str {
        match self {
            ResponseSchema::YesNo => "yes-no",
            ResponseSchema::TaggedSections(_) => "tagged",
            ResponseSchema::RankedIdList => "ranked-ids",
        }
    }

    pub fn tags(&self) -> &[String] {
        match self {
            ResponseSchema::TaggedSections(tags) => tags,
            _ => &[],
        }
    }

    fn required_placeholders(&self) -> &'static [&'static str] {
        match self {
            ResponseSchema::YesNo => &[SOURCE_BODY, TARGET_BODY],
            ResponseSchema::TaggedSections(tags) if tags.is_empty() => &[SOURCE_BODY],
            ResponseSchema::TaggedSections(_) => &[SOURCE_BODY, TARGET_BODY],
            ResponseSchema::RankedIdList => &[SOURCE_BODY, ARTIFACT_LIST],
        }
    }
}

impl fmt::Display for ResponseSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        if let ResponseSchema::TaggedSections(tags) = self {
            write!(f, "({})", tags.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    schema: ResponseSchema,
    description: String,
    body: String,
}

enum Segment<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

/// Splits a body into literal text and `{name}` placeholders. A brace pair
/// only counts as a placeholder when it encloses `[a-z_]+`.
fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            out.push(Segment::Text(&rest[..open]));
            out.push(Segment::Placeholder(&after[..name_len]));
            rest = &after[name_len + 1..];
        } else {
            out.push(Segment::Text(&rest[..=open]));
            rest = after;
        }
    }
    out.push(Segment::Text(rest));
    out
}

/// Tags instructed in the body as an adjacent `<tag></tag>` pair.
fn instructed_tags(body: &str) -> BTreeSet<String> {
    let mut tags = BTreeSet::new();
    let mut rest = body;
    while let Some(open) = rest.find('<') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find('>') else { break };
        let name = &rest[..close];
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if valid && rest[close + 1..].starts_with(&format!("</{name}>")) {
            tags.insert(name.to_string());
        }
    }
    tags
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        schema: ResponseSchema,
        description: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let template = Self {
            id: id.into(),
            schema,
            description: description.into(),
            body: body.into(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn schema(&self) -> &ResponseSchema {
        &self.schema
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    fn invalid(&self, message: String) -> PromptError {
        PromptError::InvalidTemplate {
            id: self.id.clone(),
            message,
        }
    }

    /// Every required placeholder exactly once, nothing else, and for tagged
    /// schemas the instructed tags match the declared list.
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(self.invalid("id must be non-empty without whitespace".into()));
        }
        let used: Vec<&str> = segments(&self.body)
            .into_iter()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p),
                Segment::Text(_) => None,
            })
            .collect();
        let required = self.schema.required_placeholders();
        for p in &used {
            if !KNOWN_PLACEHOLDERS.contains(p) {
                return Err(self.invalid(format!("unknown placeholder {{{p}}}")));
            }
            if !required.contains(p) {
                return Err(self.invalid(format!(
                    "placeholder {{{p}}} is not used by schema {}",
                    self.schema.name()
                )));
            }
        }
        for r in required {
            let n = used.iter().filter(|p| *p == r).count();
            if n != 1 {
                return Err(self.invalid(format!("placeholder {{{r}}} appears {n} times, expected once")));
            }
        }
        if let ResponseSchema::TaggedSections(tags) = &self.schema {
            let declared: BTreeSet<String> = tags.iter().cloned().collect();
            if declared.len() != tags.len() {
                return Err(self.invalid("duplicate tag in declaration".into()));
            }
            let instructed = instructed_tags(&self.body);
            if declared != instructed {
                return Err(self.invalid(format!(
                    "declared tags {declared:?} do not match instructed tags {instructed:?}"
                )));
            }
        }
        Ok(())
    }

    fn render(&self, fill: impl Fn(&str) -> String) -> String {
        let mut out = String::with_capacity(self.body.len() + 256);
        for seg in segments(&self.body) {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Placeholder(p) => out.push_str(&fill(p)),
            }
        }
        out
    }

    fn mismatch(&self, operation: &'static str) -> PromptError {
        PromptError::SchemaMismatch {
            id: self.id.clone(),
            schema: self.schema.name().to_string(),
            operation,
        }
    }

    /// Parses the front-matter file format described in the module docs.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let malformed = |m: &str| PromptError::MalformedFile(m.to_string());
        let rest = text
            .strip_prefix("---\n")
            .ok_or_else(|| malformed("missing opening '---' line"))?;
        let end = rest
            .find("\n---\n")
            .ok_or_else(|| malformed("missing closing '---' line"))?;
        let (header, body) = (&rest[..end], &rest[end + 5..]);

        let (mut id, mut schema, mut tags, mut description) = (None, None, Vec::new(), String::new());
        for line in header.lines() {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| malformed(&format!("header line without ':': {line:?}")))?;
            let value = value.trim();
            match key.trim() {
                "id" => id = Some(value.to_string()),
                "schema" => schema = Some(value.to_string()),
                "tags" => {
                    tags = value
                        .split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(String::from)
                        .collect()
                }
                "description" => description = value.to_string(),
                other => return Err(malformed(&format!("unknown header key {other:?}"))),
            }
        }
        let id = id.ok_or_else(|| malformed("missing id"))?;
        let schema = match schema.as_deref() {
            Some("yes-no") => ResponseSchema::YesNo,
            Some("tagged") => ResponseSchema::TaggedSections(tags),
            Some("ranked-ids") => ResponseSchema::RankedIdList,
            Some(other) => return Err(malformed(&format!("unknown schema {other:?}"))),
            None => return Err(malformed("missing schema")),
        };
        Self::new(id, schema, description, body.trim_end())
    }

    /// Inverse of [`PromptTemplate::parse`].
    pub fn to_file_string(&self) -> String {
        format!(
            "---\nid: {}\nschema: {}\ntags: {}\ndescription: {}\n---\n{}\n",
            self.id,
            self.schema.name(),
            self.schema.tags().join(", "),
            self.description,
            self.body
        )
    }
}

const BUILTIN: &[&str] = &[
    include_str!("../prompts/cm1-q1.txt"),
    include_str!("../prompts/cm1-q2.txt"),
    include_str!("../prompts/cm1-q3.txt"),
    include_str!("../prompts/cm1-q4.txt"),
    include_str!("../prompts/cm1-q5.txt"),
    include_str!("../prompts/cm1-q6.txt"),
    include_str!("../prompts/cm1-q7.txt"),
    include_str!("../prompts/cm1-q8.txt"),
    include_str!("../prompts/cm1-q9.txt"),
    include_str!("../prompts/cm1-q10.txt"),
    include_str!("../prompts/cot-v1.txt"),
    include_str!("../prompts/multi-question-v1.txt"),
    include_str!("../prompts/rank-v1.txt"),
    include_str!("../prompts/summarize-code-v1.txt"),
];

/// The built-in templates, in catalog order.
pub fn catalog() -> Vec<PromptTemplate> {
    BUILTIN
        .iter()
        .map(|text| PromptTemplate::parse(text).expect("built-in template is valid"))
        .collect()
}

pub fn find_template(id: &str) -> Result<PromptTemplate, PromptError> {
    catalog()
        .into_iter()
        .find(|t| t.id == id)
        .ok_or_else(|| PromptError::UnknownPrompt(id.to_string()))
}

/// Loads every `*.txt` template in `dir`, sorted by file name.
pub fn load_templates(dir: &Path) -> Result<Vec<PromptTemplate>, PromptError> {
    let io = |e: std::io::Error| PromptError::Io(format!("{}: {e}", dir.display()));
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| PromptTemplate::parse(&fs::read_to_string(p).map_err(io)?))
        .collect()
}

/// Question/instructions followed by the source labeled `1.` and the target
/// labeled `2.`, as laid out in the template.
pub fn render_pair(
    template: &PromptTemplate,
    source: &Artifact,
    target: &Artifact,
) -> Result<String, PromptError> {
    match template.schema() {
        ResponseSchema::YesNo => {}
        ResponseSchema::TaggedSections(tags) if !tags.is_empty() => {}
        _ => return Err(template.mismatch("render an artifact pair")),
    }
    Ok(template.render(|p| match p {
        SOURCE_BODY => source.body().to_string(),
        TARGET_BODY => target.body().to_string(),
        _ => unreachable!("validated placeholder"),
    }))
}

/// One `<artifact>` block per candidate, in the order given.
pub fn render_artifact_list(candidates: &[Artifact]) -> String {
    candidates
        .iter()
        .map(|a| {
            format!(
                "<artifact>\n<id>{}</id>\n<body>{}</body>\n</artifact>",
                a.id(),
                a.body()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_ranking(
    template: &PromptTemplate,
    source: &Artifact,
    ordered_candidates: &[Artifact],
) -> Result<String, PromptError> {
    if *template.schema() != ResponseSchema::RankedIdList {
        return Err(template.mismatch("render a ranking"));
    }
    if ordered_candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    let list = render_artifact_list(ordered_candidates);
    Ok(template.render(|p| match p {
        SOURCE_BODY => source.body().to_string(),
        ARTIFACT_LIST => list.clone(),
        _ => unreachable!("validated placeholder"),
    }))
}

pub fn render_summary(template: &PromptTemplate, code: &Artifact) -> Result<String, PromptError> {
    if *template.schema() != ResponseSchema::TaggedSections(Vec::new()) {
        return Err(template.mismatch("render a code summary"));
    }
    Ok(template.render(|p| match p {
        SOURCE_BODY => code.body().to_string(),
        _ => unreachable!("validated placeholder"),
    }))
}
