//! Turning free-form model responses into verdicts: yes/no labels, tagged
//! sections, vote counts and ranked id lists.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeded::SeededRng;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no standalone yes/no in response: {0:?}")]
    Unparseable(String),
    #[error("section <{0}> is neither yes nor no")]
    UnparseableSection(String),
    #[error("missing or unclosed tags: {0:?}")]
    MissingTags(Vec<String>),
    #[error("tag list must be non-empty and free of duplicates")]
    InvalidTagList,
    #[error("ranking response contains no expected id")]
    EmptyResponse {
        /// Seeded full-random permutation, for callers that opt in to using it.
        fallback: RankingRepair,
    },
    #[error("expected id set is empty")]
    NoExpectedIds,
}

/// First standalone `yes` or `no` (case-insensitive) decides.
pub fn parse_yes_no(response: &str) -> Result<bool, ParseError> {
    response
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|word| {
            if word.eq_ignore_ascii_case("yes") {
                Some(true)
            } else if word.eq_ignore_ascii_case("no") {
                Some(false)
            } else {
                None
            }
        })
        .ok_or_else(|| ParseError::Unparseable(response.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedResponse {
    pub sections: BTreeMap<String, String>,
    pub raw: String,
}

impl TaggedResponse {
    pub fn section(&self, tag: &str) -> Option<&str> {
        self.sections.get(tag).map(String::as_str)
    }
}

fn check_tags<S: AsRef<str>>(tags: &[S]) -> Result<(), ParseError> {
    let distinct: HashSet<&str> = tags.iter().map(AsRef::as_ref).collect();
    if tags.is_empty() || distinct.len() != tags.len() || distinct.contains("") {
        return Err(ParseError::InvalidTagList);
    }
    Ok(())
}

/// Text between the first `<tag>` and the first `</tag>` after it, trimmed.
fn extract(response: &str, tag: &str) -> Option<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = response.find(&open)? + open.len();
    let len = response[start..].find(&close)?;
    Some(response[start..start + len].trim().to_string())
}

/// Extracts one section per declared tag, in any order, ignoring prose around them.
pub fn parse_tagged<S: AsRef<str>>(response: &str, tags: &[S]) -> Result<TaggedResponse, ParseError> {
    check_tags(tags)?;
    let mut sections = BTreeMap::new();
    let mut missing = Vec::new();
    for tag in tags {
        let tag = tag.as_ref();
        match extract(response, tag) {
            Some(text) => {
                sections.insert(tag.to_string(), text);
            }
            None => missing.push(tag.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(ParseError::MissingTags(missing));
    }
    Ok(TaggedResponse {
        sections,
        raw: response.to_string(),
    })
}

/// Number of `vote_tags` sections answering yes.
pub fn vote_count<S: AsRef<str>>(tagged: &TaggedResponse, vote_tags: &[S]) -> Result<u32, ParseError> {
    let mut votes = 0;
    for tag in vote_tags {
        let tag = tag.as_ref();
        let section = tagged
            .section(tag)
            .ok_or_else(|| ParseError::MissingTags(vec![tag.to_string()]))?;
        match parse_yes_no(section) {
            Ok(true) => votes += 1,
            Ok(false) => {}
            Err(_) => return Err(ParseError::UnparseableSection(tag.to_string())),
        }
    }
    Ok(votes)
}

/// A ranking made whole: `order` is always a permutation of the expected ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRepair {
    pub order: Vec<String>,
    /// Tokens that were not expected ids, or repeats of an id already placed.
    pub dropped: Vec<String>,
    /// Expected ids the model left out, in the order they were appended.
    pub appended: Vec<String>,
}

const WRAPPERS: &[char] = &['"', '\'', '`', '[', ']', '(', ')', '*', '.'];

fn resolve<'a>(token: &str, expected: &'a BTreeSet<String>) -> Option<&'a String> {
    expected
        .get(token)
        .or_else(|| expected.get(token.trim_matches(WRAPPERS).trim()))
}

/// Splits a comma (or newline) delimited id list, keeps the first occurrence
/// of every expected id, and appends the missing ones in a seeded shuffle of
/// their ascending order. Unknown tokens are dropped, never fuzzy-matched;
/// only surrounding quotes, brackets and periods are stripped.
pub fn parse_ranking(
    response: &str,
    expected_ids: &BTreeSet<String>,
    seed: u64,
) -> Result<RankingRepair, ParseError> {
    if expected_ids.is_empty() {
        return Err(ParseError::NoExpectedIds);
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut order = Vec::new();
    let mut dropped = Vec::new();
    for token in response.split([',', '\n']).map(str::trim).filter(|t| !t.is_empty()) {
        match resolve(token, expected_ids) {
            Some(id) if seen.insert(id) => order.push(id.clone()),
            _ => dropped.push(token.to_string()),
        }
    }

    let mut appended: Vec<String> = expected_ids
        .iter()
        .filter(|id| !seen.contains(id.as_str()))
        .cloned()
        .collect();
    SeededRng::new(seed).shuffle(&mut appended);
    order.extend(appended.iter().cloned());

    let repair = RankingRepair {
        order,
        dropped,
        appended,
    };
    if seen.is_empty() {
        return Err(ParseError::EmptyResponse { fallback: repair });
    }
    Ok(repair)
}
