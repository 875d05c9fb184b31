//! Confusion counts, precision/recall, average precision and MAP.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LinkPair;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("pair {0} predicted more than once")]
    DuplicatePair(LinkPair),
    #[error("average precision is undefined without relevant items")]
    UndefinedAp,
    #[error("id {0:?} appears more than once in the ranking")]
    DuplicateInRanking(String),
    #[error("no query has a defined average precision")]
    NoDefinedQueries,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }
}

/// A ratio whose denominator may be zero; then `value` is 0 and the flag is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub zero_denominator: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio {
                value: 0.0,
                zero_denominator: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                zero_denominator: false,
            }
        }
    }
}

pub fn confusion<'a>(
    predictions: impl IntoIterator<Item = (&'a LinkPair, bool)>,
    truth: &BTreeSet<LinkPair>,
) -> Result<ConfusionCounts, MetricsError> {
    let mut seen = HashSet::new();
    let mut c = ConfusionCounts::default();
    for (pair, predicted) in predictions {
        if !seen.insert(pair) {
            return Err(MetricsError::DuplicatePair(pair.clone()));
        }
        match (predicted, truth.contains(pair)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + fp)`.
pub fn precision(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fp)
}

/// `tp / (tp + fn)`.
pub fn recall(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fn_)
}

/// Mean, over relevant items, of precision at the rank where each appears.
/// Relevant items missing from the ranking contribute zero.
pub fn average_precision<S: AsRef<str>>(
    ranking: &[S],
    relevant: &BTreeSet<String>,
) -> Result<f64, MetricsError> {
    if relevant.is_empty() {
        return Err(MetricsError::UndefinedAp);
    }
    let mut seen = HashSet::new();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().enumerate() {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(MetricsError::DuplicateInRanking(id.to_string()));
        }
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEvaluation {
    pub parent_id: String,
    /// `None` when the query has no relevant items.
    pub average_precision: Option<f64>,
    pub num_relevant: usize,
}

impl QueryEvaluation {
    pub fn evaluate<S: AsRef<str>>(
        parent_id: impl Into<String>,
        ranking: &[S],
        relevant: &BTreeSet<String>,
    ) -> Result<Self, MetricsError> {
        let average_precision = match average_precision(ranking, relevant) {
            Ok(ap) => Some(ap),
            Err(MetricsError::UndefinedAp) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            parent_id: parent_id.into(),
            average_precision,
            num_relevant: relevant.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapScore {
    pub map: f64,
    /// Queries with a defined AP: the N of the mean.
    pub n_queries: usize,
    /// Queries left out for having no relevant items.
    pub n_excluded: usize,
}

/// Arithmetic mean of the defined per-query APs.
pub fn map_score(evals: &[QueryEvaluation]) -> Result<MapScore, MetricsError> {
    let defined: Vec<f64> = evals.iter().filter_map(|e| e.average_precision).collect();
    if defined.is_empty() {
        return Err(MetricsError::NoDefinedQueries);
    }
    Ok(MapScore {
        map: defined.iter().sum::<f64>() / defined.len() as f64,
        n_queries: defined.len(),
        n_excluded: evals.len() - defined.len(),
    })
}
