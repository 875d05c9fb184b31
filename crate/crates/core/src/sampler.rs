//! Representative parent sampling: one parent with the fewest true links,
//! three at the median link count and one with the most.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::TraceDataset;
use crate::seeded::SeededRng;

pub const SAMPLE_SIZE: usize = 5;
const MEDIAN_PICKS: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("need at least {SAMPLE_SIZE} parents to sample, dataset has {0}")]
    TooFewParents(usize),
    #[error("only {found} parents available around the median link count {median}")]
    TooFewMedianCandidates { median: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Min,
    Median,
    Max,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::Min => "min",
            Category::Median => "med",
            Category::Max => "max",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampledParent {
    pub category: Category,
    pub parent_id: String,
    pub link_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParentSample {
    /// Category order: min, three medians (ascending id), max.
    pub picks: Vec<SampledParent>,
    pub min_count: usize,
    pub median_count: usize,
    pub max_count: usize,
    /// Largest |count - median| admitted into the median band; 0 unless widened.
    pub median_band: usize,
}

impl ParentSample {
    pub fn ids(&self) -> Vec<String> {
        self.picks.iter().map(|p| p.parent_id.clone()).collect()
    }
}

/// Draws the five representative parents. Ties inside a category are broken
/// by the seeded generator; the result is a pure function of `(dataset, seed)`.
///
/// The median is the lower-middle element of the per-parent link counts. If
/// fewer than three remaining parents sit exactly on it, the band widens to
/// the next attained distance from the median on both sides until it holds
/// three. The max parent is drawn before the median band so widening can
/// never consume the last parent at the maximum count.
pub fn sample_parents(dataset: &TraceDataset, seed: u64) -> Result<ParentSample, SampleError> {
    let mut pool: Vec<(String, usize)> = dataset
        .link_counts()
        .into_iter()
        .map(|(id, n)| (id.to_string(), n))
        .collect();
    if pool.len() < SAMPLE_SIZE {
        return Err(SampleError::TooFewParents(pool.len()));
    }

    let mut sorted: Vec<usize> = pool.iter().map(|(_, n)| *n).collect();
    sorted.sort_unstable();
    let min_count = sorted[0];
    let max_count = sorted[sorted.len() - 1];
    let median_count = sorted[(sorted.len() - 1) / 2];

    let mut rng = SeededRng::new(seed);
    let min = draw_one(&mut pool, &mut rng, |n| n == min_count);
    let max = draw_one(&mut pool, &mut rng, |n| n == max_count);

    let mut distances: Vec<usize> = pool.iter().map(|(_, n)| n.abs_diff(median_count)).collect();
    distances.sort_unstable();
    distances.dedup();
    let radius = distances
        .iter()
        .copied()
        .find(|&d| {
            pool.iter()
                .filter(|(_, n)| n.abs_diff(median_count) <= d)
                .count()
                >= MEDIAN_PICKS
        })
        .ok_or(SampleError::TooFewMedianCandidates {
            median: median_count,
            found: pool.len(),
        })?;
    let mut band: Vec<(String, usize)> = pool
        .into_iter()
        .filter(|(_, n)| n.abs_diff(median_count) <= radius)
        .collect();
    let mut medians = rng.take(&mut band, MEDIAN_PICKS);
    medians.sort();

    let pick = |category, (parent_id, link_count)| SampledParent {
        category,
        parent_id,
        link_count,
    };
    let mut picks = vec![pick(Category::Min, min)];
    picks.extend(medians.into_iter().map(|m| pick(Category::Median, m)));
    picks.push(pick(Category::Max, max));

    Ok(ParentSample {
        picks,
        min_count,
        median_count,
        max_count,
        median_band: radius,
    })
}

fn draw_one(
    pool: &mut Vec<(String, usize)>,
    rng: &mut SeededRng,
    accept: impl Fn(usize) -> bool,
) -> (String, usize) {
    let tied: Vec<usize> = (0..pool.len()).filter(|&i| accept(pool[i].1)).collect();
    let idx = tied[rng.below(tied.len())];
    pool.remove(idx)
}
