//! TF-IDF vector space model: tokenizer, IDF fitting, cosine scoring and
//! candidate ranking.
//!
//! Term frequency is the raw count and `idf(t) = ln(N / df(t)) + 1`. Terms
//! that never occurred in the fitted corpus carry no weight.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::corpus::{Artifact, TraceQuery};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VsmError {
    #[error("cannot fit IDF over an empty corpus")]
    EmptyCorpus,
}

/// Small English stopword list, used only when [`Tokenizer::remove_stopwords`] is set.
const STOPWORDS: &[&str] = &[
    "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it", "its",
    "of", "on", "or", "that", "the", "this", "to", "was", "were", "will", "with",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer {
    pub remove_stopwords: bool,
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = tokenize(text);
        if self.remove_stopwords {
            out.retain(|t| !STOPWORDS.contains(&t.as_str()));
        }
        out
    }
}

/// Lowercased tokens split on non-alphanumeric characters and camelCase humps.
/// Tokens shorter than two characters are dropped; no stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for run in text.split(|c: char| !c.is_alphanumeric()) {
        split_humps(run, &mut tokens);
    }
    tokens
}

fn split_humps(run: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = run.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let (prev, cur) = (chars[i - 1], chars[i]);
        let lower_to_upper = (prev.is_lowercase() || prev.is_numeric()) && cur.is_uppercase();
        // "HTTPServer": split before the 'S' that starts a lowercase word
        let acronym_end = prev.is_uppercase()
            && cur.is_uppercase()
            && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
        if lower_to_upper || acronym_end {
            push_token(&chars[start..i], out);
            start = i;
        }
    }
    push_token(&chars[start..], out);
}

fn push_token(chars: &[char], out: &mut Vec<String>) {
    if chars.len() >= 2 {
        out.push(chars.iter().flat_map(|c| c.to_lowercase()).collect());
    }
}

fn term_counts(tokens: Vec<String>) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0.0) += 1.0;
    }
    counts
}

/// Inverse document frequencies fitted over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    n_docs: usize,
    idf: HashMap<String, f64>,
    tokenizer: Tokenizer,
}

impl IdfTable {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn get(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    pub fn vector(&self, text: &str) -> TermVector {
        let weights = term_counts(self.tokenizer.tokenize(text))
            .into_iter()
            .filter_map(|(term, tf)| self.get(&term).map(|idf| (term, tf * idf)))
            .collect();
        TermVector::new(weights)
    }
}

pub fn fit_corpus<'a>(
    artifacts: impl IntoIterator<Item = &'a Artifact>,
) -> Result<IdfTable, VsmError> {
    fit_corpus_with(artifacts, Tokenizer::default())
}

pub fn fit_corpus_with<'a>(
    artifacts: impl IntoIterator<Item = &'a Artifact>,
    tokenizer: Tokenizer,
) -> Result<IdfTable, VsmError> {
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut n_docs = 0;
    for artifact in artifacts {
        n_docs += 1;
        let unique: BTreeSet<String> = tokenizer.tokenize(artifact.body()).into_iter().collect();
        for term in unique {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    if n_docs == 0 {
        return Err(VsmError::EmptyCorpus);
    }
    let n = n_docs as f64;
    let idf = df
        .into_iter()
        .map(|(term, d)| (term, (n / d as f64).ln() + 1.0))
        .collect();
    Ok(IdfTable {
        n_docs,
        idf,
        tokenizer,
    })
}

/// Sparse TF-IDF weights with a cached Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TermVector {
    weights: BTreeMap<String, f64>,
    norm: f64,
}

impl TermVector {
    pub fn new(weights: BTreeMap<String, f64>) -> Self {
        debug_assert!(weights.values().all(|w| *w >= 0.0));
        let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
        Self { weights, norm }
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn cosine(&self, other: &TermVector) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        let (small, large) = if self.weights.len() <= other.weights.len() {
            (self, other)
        } else {
            (other, self)
        };
        let dot: f64 = small
            .weights
            .iter()
            .filter_map(|(t, w)| large.weights.get(t).map(|v| w * v))
            .sum();
        // an empty sum is -0.0, which total_cmp would order below 0.0
        if dot <= 0.0 {
            return 0.0;
        }
        (dot / (self.norm * other.norm)).min(1.0)
    }
}

/// Cosine similarity of the two artifacts' TF-IDF vectors, in `[0, 1]`.
pub fn score(source: &Artifact, target: &Artifact, idf: &IdfTable) -> f64 {
    idf.vector(source.body()).cosine(&idf.vector(target.body()))
}

/// Candidates by descending score, ties broken by ascending child id.
pub fn vsm_rank(query: &TraceQuery, idf: &IdfTable) -> Vec<(String, f64)> {
    let source = idf.vector(query.parent.body());
    let mut scored: Vec<(String, f64)> = query
        .candidates
        .iter()
        .map(|c| (c.id().to_string(), source.cosine(&idf.vector(c.body()))))
        .collect();
    scored.sort_by(rank_order);
    scored
}

/// Descending score, then ascending id.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}
