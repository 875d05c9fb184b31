//! End-to-end strategies: code summarization, pairwise classification
//! (simple, chain-of-thought, multi-question vote) and VSM-seeded ranking.
//!
//! Work fans out over up to `gateway.concurrency()` threads; outputs are
//! always collected in parent-major, child-ascending order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Artifact, CorpusError, LinkPair, TraceDataset, TraceQuery};
use crate::gateway::{Completion, CompletionRequest, Gateway, GatewayError, ModelSettings};
use crate::parsing::{self, ParseError, RankingRepair};
use crate::prompting::{self, PromptError, PromptTemplate, ResponseSchema};
use crate::seeded::SeededRng;
use crate::vsm::{self, IdfTable};

/// The five relationship questions counted as votes.
pub const VOTE_TAGS: [&str; 5] = ["implements", "decomposed", "fulfills", "feature", "capability"];
pub const COT_VERDICT_TAG: &str = "answer";
pub const MULTI_VERDICT_TAG: &str = "traced";
pub const MAX_REASKS: u32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{context}: {source}")]
    Gateway {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("template {template} ({schema}) cannot drive {mode} classification")]
    ModeMismatch {
        template: String,
        schema: String,
        mode: ClassifyMode,
    },
    #[error("outcome for {0} carries no vote count")]
    MissingVotes(LinkPair),
    #[error("query {0} has no candidates")]
    EmptyQuery(String),
    #[error("{path}: {message}")]
    Records { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifyMode {
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "cot")]
    Cot,
    #[serde(rename = "multi")]
    MultiQuestion,
}

impl fmt::Display for ClassifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifyMode::Simple => "simple",
            ClassifyMode::Cot => "cot",
            ClassifyMode::MultiQuestion => "multi",
        })
    }
}

impl FromStr for ClassifyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(ClassifyMode::Simple),
            "cot" => Ok(ClassifyMode::Cot),
            "multi" => Ok(ClassifyMode::MultiQuestion),
            other => Err(format!("unknown mode {other:?} (expected simple, cot or multi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPolicy {
    #[default]
    Abort,
    SkipErrors,
}

/// How candidates are ordered before they are shown to the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum InitialOrder {
    #[default]
    Vsm,
    Canonical,
    Shuffle(u64),
}

impl fmt::Display for InitialOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialOrder::Vsm => f.write_str("vsm"),
            InitialOrder::Canonical => f.write_str("canonical"),
            InitialOrder::Shuffle(seed) => write!(f, "shuffle:{seed}"),
        }
    }
}

impl FromStr for InitialOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vsm" => Ok(InitialOrder::Vsm),
            "canonical" => Ok(InitialOrder::Canonical),
            _ => s
                .strip_prefix("shuffle:")
                .and_then(|seed| seed.parse().ok())
                .map(InitialOrder::Shuffle)
                .ok_or_else(|| format!("unknown initial order {s:?} (expected vsm, canonical or shuffle:SEED)")),
        }
    }
}

impl Serialize for InitialOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InitialOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Knobs shared by every strategy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub model: ModelSettings,
    pub on_error: ErrorPolicy,
    /// Extra asks (identical prompt, new attempt number) after a malformed
    /// response; capped at [`MAX_REASKS`].
    pub reask: u32,
    /// Use the seeded full-random permutation when a ranking response names no
    /// candidate at all, instead of failing.
    pub random_fallback: bool,
}

impl RunOptions {
    fn reasks(&self) -> u32 {
        self.reask.min(MAX_REASKS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub parent_id: String,
    pub child_id: String,
    pub mode: ClassifyMode,
    pub predicted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<BTreeMap<String, String>>,
    pub prompt_id: String,
    /// Digest of the request whose response produced this verdict.
    pub request_digest: String,
}

impl ClassificationOutcome {
    pub fn pair(&self) -> LinkPair {
        LinkPair::new(&self.parent_id, &self.child_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingOutcome {
    pub parent_id: String,
    pub init: InitialOrder,
    pub initial_order: Vec<String>,
    pub final_order: Vec<String>,
    /// Ids the model omitted, appended in seeded order.
    pub repaired: Vec<String>,
    /// Tokens in the response that were not candidate ids, or repeats.
    pub dropped: Vec<String>,
    /// The response named no candidate and the random fallback was used.
    #[serde(default)]
    pub random_fallback: bool,
    pub prompt_id: String,
    pub request_digest: String,
}

/// A unit of work that failed under [`ErrorPolicy::SkipErrors`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub parent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRun {
    pub outcomes: Vec<ClassificationOutcome>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingRun {
    pub outcomes: Vec<RankingOutcome>,
    pub failures: Vec<ItemFailure>,
}

/// Runs `f` over `items` on up to `workers` threads and returns results in
/// input order. With `stop_on_error`, items not yet started after the first
/// failure are skipped (`None`).
fn map_ordered<T, R, E, F>(items: &[T], workers: usize, stop_on_error: bool, f: F) -> Vec<Option<Result<R, E>>>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let results: Mutex<Vec<Option<Result<R, E>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if stop_on_error && failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("results poisoned")
}

fn ask(
    gateway: &Gateway,
    prompt: &str,
    attempt: u32,
    options: &RunOptions,
    context: impl Fn() -> String,
) -> Result<Completion, PipelineError> {
    let mut request = CompletionRequest::new(prompt, &options.model);
    request.attempt = attempt;
    gateway.complete(&request).map_err(|source| PipelineError::Gateway {
        context: context(),
        source,
    })
}

/// Asks, parses, and re-asks on parse failure up to the configured bound.
fn ask_parsed<T>(
    gateway: &Gateway,
    prompt: &str,
    options: &RunOptions,
    context: impl Fn() -> String,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<(T, String), PipelineError> {
    let mut attempt = 0;
    loop {
        let completion = ask(gateway, prompt, attempt, options, &context)?;
        match parse(&completion.text) {
            Ok(v) => return Ok((v, completion.digest)),
            Err(_) if attempt < options.reasks() => attempt += 1,
            Err(source) => {
                return Err(PipelineError::Parse {
                    context: context(),
                    source,
                })
            }
        }
    }
}

struct Verdict {
    predicted: bool,
    votes: Option<u32>,
    rationale: Option<BTreeMap<String, String>>,
}

/// Whether `template` can drive `mode` classification.
pub fn check_mode(template: &PromptTemplate, mode: ClassifyMode) -> Result<(), PipelineError> {
    let tags = template.schema().tags();
    let has = |t: &str| tags.iter().any(|x| x == t);
    let ok = match (mode, template.schema()) {
        (ClassifyMode::Simple, ResponseSchema::YesNo) => true,
        (ClassifyMode::Cot, ResponseSchema::TaggedSections(_)) => has(COT_VERDICT_TAG),
        (ClassifyMode::MultiQuestion, ResponseSchema::TaggedSections(_)) => {
            has(MULTI_VERDICT_TAG) && VOTE_TAGS.iter().all(|t| has(t))
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(PipelineError::ModeMismatch {
            template: template.id().to_string(),
            schema: template.schema().to_string(),
            mode,
        })
    }
}

fn parse_verdict(response: &str, template: &PromptTemplate, mode: ClassifyMode) -> Result<Verdict, ParseError> {
    match mode {
        ClassifyMode::Simple => Ok(Verdict {
            predicted: parsing::parse_yes_no(response)?,
            votes: None,
            rationale: None,
        }),
        ClassifyMode::Cot | ClassifyMode::MultiQuestion => {
            let tagged = parsing::parse_tagged(response, template.schema().tags())?;
            let (verdict_tag, votes) = if mode == ClassifyMode::Cot {
                (COT_VERDICT_TAG, None)
            } else {
                (MULTI_VERDICT_TAG, Some(parsing::vote_count(&tagged, &VOTE_TAGS)?))
            };
            let verdict = tagged.section(verdict_tag).unwrap_or_default();
            let predicted = parsing::parse_yes_no(verdict)
                .map_err(|_| ParseError::UnparseableSection(verdict_tag.to_string()))?;
            Ok(Verdict {
                predicted,
                votes,
                rationale: Some(tagged.sections),
            })
        }
    }
}

/// One outcome per (parent, candidate) pair, parent-major and in candidate order.
pub fn classify_pairs(
    queries: &[TraceQuery],
    template: &PromptTemplate,
    gateway: &Gateway,
    mode: ClassifyMode,
    options: &RunOptions,
) -> Result<ClassificationRun, PipelineError> {
    check_mode(template, mode)?;
    let pairs: Vec<(&Artifact, &Artifact)> = queries
        .iter()
        .flat_map(|q| q.candidates.iter().map(move |c| (&q.parent, c)))
        .collect();
    let abort = options.on_error == ErrorPolicy::Abort;
    let results = map_ordered(&pairs, gateway.concurrency(), abort, |(parent, child)| {
        let prompt = prompting::render_pair(template, parent, child)?;
        let context = || format!("classifying ({}, {})", parent.id(), child.id());
        let (verdict, digest) =
            ask_parsed(gateway, &prompt, options, context, |r| parse_verdict(r, template, mode))?;
        Ok::<_, PipelineError>(ClassificationOutcome {
            parent_id: parent.id().to_string(),
            child_id: child.id().to_string(),
            mode,
            predicted: verdict.predicted,
            votes: verdict.votes,
            rationale: verdict.rationale,
            prompt_id: template.id().to_string(),
            request_digest: digest,
        })
    });

    let mut run = ClassificationRun::default();
    for ((parent, child), result) in pairs.iter().zip(results) {
        match result {
            Some(Ok(outcome)) => run.outcomes.push(outcome),
            Some(Err(e)) if abort => return Err(e),
            Some(Err(e)) => run.failures.push(ItemFailure {
                parent_id: parent.id().to_string(),
                child_id: Some(child.id().to_string()),
                error: e.to_string(),
            }),
            None => {}
        }
    }
    Ok(run)
}

/// Predicts a link wherever at least `k` relationship questions were answered yes.
pub fn threshold_by_votes(
    outcomes: &[ClassificationOutcome],
    k: u32,
) -> Result<Vec<(LinkPair, bool)>, PipelineError> {
    outcomes
        .iter()
        .map(|o| {
            let votes = o.votes.ok_or_else(|| PipelineError::MissingVotes(o.pair()))?;
            Ok((o.pair(), votes >= k))
        })
        .collect()
}

/// Candidate order before the model sees them.
pub fn initial_order(query: &TraceQuery, idf: &IdfTable, init: InitialOrder) -> Vec<String> {
    match init {
        InitialOrder::Vsm => vsm::vsm_rank(query, idf).into_iter().map(|(id, _)| id).collect(),
        InitialOrder::Canonical => {
            let mut ids: Vec<String> = query.candidate_ids().map(String::from).collect();
            ids.sort();
            ids
        }
        InitialOrder::Shuffle(seed) => {
            let mut ids: Vec<String> = query.candidate_ids().map(String::from).collect();
            ids.sort();
            SeededRng::new(seed).shuffle(&mut ids);
            ids
        }
    }
}

/// Presents the candidates in the chosen initial order and repairs the
/// model's ranking into a permutation of them.
pub fn rank_query(
    query: &TraceQuery,
    idf: &IdfTable,
    template: &PromptTemplate,
    gateway: &Gateway,
    seed: u64,
    init: InitialOrder,
    options: &RunOptions,
) -> Result<RankingOutcome, PipelineError> {
    let parent_id = query.parent.id();
    if query.candidates.is_empty() {
        return Err(PipelineError::EmptyQuery(parent_id.to_string()));
    }
    let order = initial_order(query, idf, init);
    let by_id: BTreeMap<&str, &Artifact> = query.candidates.iter().map(|c| (c.id(), c)).collect();
    let ordered: Vec<Artifact> = order.iter().map(|id| by_id[id.as_str()].clone()).collect();
    let prompt = prompting::render_ranking(template, &query.parent, &ordered)?;
    let expected: BTreeSet<String> = order.iter().cloned().collect();
    let context = || format!("ranking candidates of {parent_id}");

    let (repair, random_fallback, digest) = match ask_parsed(gateway, &prompt, options, context, |r| {
        parsing::parse_ranking(r, &expected, seed)
    }) {
        Ok((repair, digest)) => (repair, false, digest),
        Err(PipelineError::Parse {
            source: ParseError::EmptyResponse { fallback },
            ..
        }) if options.random_fallback => {
            // the digest of the final attempt identifies the record that failed
            let digest = last_digest(&prompt, options);
            (fallback, true, digest)
        }
        Err(e) => return Err(e),
    };
    let RankingRepair {
        order: final_order,
        dropped,
        appended,
    } = repair;
    Ok(RankingOutcome {
        parent_id: parent_id.to_string(),
        init,
        initial_order: order,
        final_order,
        repaired: appended,
        dropped,
        random_fallback,
        prompt_id: template.id().to_string(),
        request_digest: digest,
    })
}

fn last_digest(prompt: &str, options: &RunOptions) -> String {
    let mut request = CompletionRequest::new(prompt, &options.model);
    request.attempt = options.reasks();
    request.digest()
}

pub fn rank_queries(
    queries: &[TraceQuery],
    idf: &IdfTable,
    template: &PromptTemplate,
    gateway: &Gateway,
    seed: u64,
    init: InitialOrder,
    options: &RunOptions,
) -> Result<RankingRun, PipelineError> {
    let abort = options.on_error == ErrorPolicy::Abort;
    let results = map_ordered(queries, gateway.concurrency(), abort, |q| {
        rank_query(q, idf, template, gateway, seed, init, options)
    });
    let mut run = RankingRun::default();
    for (query, result) in queries.iter().zip(results) {
        match result {
            Some(Ok(outcome)) => run.outcomes.push(outcome),
            Some(Err(e)) if abort => return Err(e),
            Some(Err(e)) => run.failures.push(ItemFailure {
                parent_id: query.parent.id().to_string(),
                child_id: None,
                error: e.to_string(),
            }),
            None => {}
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRun {
    /// Input dataset with every successfully summarized child replaced.
    pub dataset: TraceDataset,
    pub summarized: Vec<String>,
    pub failures: Vec<ItemFailure>,
}

/// Replaces code children's bodies with model summaries. Failures are
/// collected per artifact; successful summaries are kept either way.
pub fn summarize_code(
    dataset: &TraceDataset,
    gateway: &Gateway,
    template: &PromptTemplate,
    options: &RunOptions,
) -> Result<SummaryRun, PipelineError> {
    if !dataset.child_is_code() {
        return Ok(SummaryRun {
            dataset: dataset.clone(),
            summarized: Vec::new(),
            failures: Vec::new(),
        });
    }
    // fail fast on a wrong template rather than once per artifact
    let first = dataset.children().next();
    if let Some(child) = first {
        prompting::render_summary(template, child)?;
    }
    let children: Vec<&Artifact> = dataset
        .children()
        .filter(|c| !dataset.original_bodies().contains_key(c.id()))
        .collect();
    let results = map_ordered(&children, gateway.concurrency(), false, |child| {
        let prompt = prompting::render_summary(template, child)?;
        let context = || format!("summarizing {}", child.id());
        let (summary, _) = ask_parsed(gateway, &prompt, options, context, |r| {
            let text = r.trim();
            if text.is_empty() {
                Err(ParseError::Unparseable(r.to_string()))
            } else {
                Ok(text.to_string())
            }
        })?;
        Ok::<_, PipelineError>(summary)
    });

    let mut bodies = BTreeMap::new();
    let mut failures = Vec::new();
    for (child, result) in children.iter().zip(results) {
        match result {
            Some(Ok(summary)) => {
                bodies.insert(child.id().to_string(), summary);
            }
            Some(Err(e)) => failures.push(ItemFailure {
                parent_id: child.id().to_string(),
                child_id: None,
                error: e.to_string(),
            }),
            None => {}
        }
    }
    Ok(SummaryRun {
        dataset: dataset.with_child_bodies(&bodies)?,
        summarized: bodies.into_keys().collect(),
        failures,
    })
}

/// A line of an outcomes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutcomeRecord {
    Classification(ClassificationOutcome),
    Ranking(RankingOutcome),
}

pub fn to_ndjson<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let err = |e: std::io::Error| PipelineError::Records {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut file = fs::File::create(path).map_err(err)?;
    file.write_all(to_ndjson(items).as_bytes()).map_err(err)
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let err = |message: String| PipelineError::Records {
        path: path.display().to_string(),
        message,
    };
    let file = fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
