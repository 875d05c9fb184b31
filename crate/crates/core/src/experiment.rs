//! Config-driven experiment runs and the metrics report they produce.
//!
//! A run loads the dataset, optionally summarizes code children, picks the
//! parents, then runs each configured classification prompt and the ranking
//! strategy, writing outcomes, the replay archive and the report into the
//! output directory.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, Artifact, CorpusError, TraceDataset, TraceQuery};
use crate::gateway::{Gateway, GatewayError, LiveBackend, ModelSettings, ReplayArchive, DEFAULT_CONCURRENCY};
use crate::metrics::{self, ConfusionCounts, MapScore, MetricsError, QueryEvaluation, Ratio};
use crate::pipeline::{
    self, ClassificationOutcome, ClassifyMode, ErrorPolicy, InitialOrder, OutcomeRecord, PipelineError, RankingOutcome,
    RunOptions,
};
use crate::prompting::{self, PromptTemplate};
use crate::sampler::{self, SampleError};
use crate::synthetic::SyntheticResponder;
use crate::vsm::{self, IdfTable};

pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.md";
pub const RECORDED_ARCHIVE_FILE: &str = "replay.jsonl";
pub const SUMMARIZED_DIR: &str = "summarized";
pub const RANKING_OUTCOMES_FILE: &str = "ranking.jsonl";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config ({field}): {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("backend setup: {0}")]
    Backend(#[source] GatewayError),
    #[error("dataset: {0}")]
    Dataset(#[from] CorpusError),
    #[error("sampling: {0}")]
    Sample(#[from] SampleError),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: PipelineError,
    },
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl ExperimentError {
    /// 2 config, 3 provider, 4 parse abort, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::ConfigInvalid { .. } | ExperimentError::Backend(_) => 2,
            ExperimentError::Stage { source, .. } => pipeline_exit_code(source),
            _ => 1,
        }
    }
}

pub fn pipeline_exit_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Gateway { .. } => 3,
        PipelineError::Parse { .. } => 4,
        PipelineError::ModeMismatch { .. } | PipelineError::Prompt(_) => 2,
        _ => 1,
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ExperimentError {
    ExperimentError::ConfigInvalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    /// HTTP provider; every completion is recorded to the archive.
    Live,
    /// HTTP provider behind the archive: hits are served offline, misses are
    /// fetched and appended.
    Cached,
    /// Archive only; a miss is an error.
    Replay,
    /// Built-in rule-based responder; recorded like live.
    Synthetic,
}

impl fmt::Display for BackendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendMode::Live => "live",
            BackendMode::Cached => "cached",
            BackendMode::Replay => "replay",
            BackendMode::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: BackendMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Explicit parent ids; when set, no sampling happens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parents: Option<Vec<String>>,
    /// Overrides the top-level seed for sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationConfig {
    pub prompt: String,
    pub mode: ClassifyMode,
    /// Vote thresholds to sweep (multi mode only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingConfig {
    pub prompt: String,
    #[serde(default)]
    pub init: InitialOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeConfig {
    pub prompt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub on_error: ErrorPolicy,
    #[serde(default)]
    pub reask: u32,
    #[serde(default)]
    pub random_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Dataset directory, relative to the config file.
    pub dataset: PathBuf,
    /// Output directory, relative to the config file.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summarize: Option<SummarizeConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classification: Vec<ClassificationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| locate_field(text, s.start));
            invalid(field, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if self.classification.is_empty() && self.ranking.is_none() {
            return Err(invalid("classification", "configure at least one classification or a ranking"));
        }
        for (i, c) in self.classification.iter().enumerate() {
            let template = find(&format!("classification[{i}].prompt"), &c.prompt)?;
            pipeline::check_mode(&template, c.mode)
                .map_err(|e| invalid(format!("classification[{i}].mode"), e.to_string()))?;
            if !c.thresholds.is_empty() && c.mode != ClassifyMode::MultiQuestion {
                return Err(invalid(format!("classification[{i}].thresholds"), "thresholds need mode = \"multi\""));
            }
        }
        if let Some(r) = &self.ranking {
            let t = find("ranking.prompt", &r.prompt)?;
            if *t.schema() != prompting::ResponseSchema::RankedIdList {
                return Err(invalid("ranking.prompt", format!("{} is not a ranking template", r.prompt)));
            }
        }
        if let Some(s) = &self.summarize {
            let t = find("summarize.prompt", &s.prompt)?;
            if *t.schema() != prompting::ResponseSchema::TaggedSections(Vec::new()) {
                return Err(invalid("summarize.prompt", format!("{} is not a summary template", s.prompt)));
            }
        }
        let needs_archive = matches!(self.backend.mode, BackendMode::Replay | BackendMode::Cached);
        if needs_archive && self.backend.archive.is_none() {
            return Err(invalid("backend.archive", "replay and cached modes need an archive path"));
        }
        if self.policy.reask > pipeline::MAX_REASKS {
            return Err(invalid("policy.reask", format!("at most {}", pipeline::MAX_REASKS)));
        }
        if let Some(ids) = &self.sampling.parents {
            if ids.is_empty() {
                return Err(invalid("sampling.parents", "must not be empty when given"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the config as canonical JSON: sorted keys, defaults filled
    /// in. Settings that cannot change results (output location, worker
    /// count, timeout) are left out.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().map(|o| o.remove("output_dir"));
        if let Some(backend) = value.get_mut("backend").and_then(|b| b.as_object_mut()) {
            backend.remove("concurrency");
            backend.remove("timeout_secs");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            model: self.model.clone(),
            on_error: self.policy.on_error,
            reask: self.policy.reask,
            random_fallback: self.policy.random_fallback,
        }
    }
}

fn find(field: &str, id: &str) -> Result<PromptTemplate, ExperimentError> {
    prompting::find_template(id).map_err(|e| invalid(field, e.to_string()))
}

/// Best-effort name of the key on the line containing byte `offset`.
fn locate_field(text: &str, offset: usize) -> String {
    let line_start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    match line.split_once('=') {
        Some((key, _)) => key.trim().to_string(),
        None => line.trim().trim_matches(['[', ']']).to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub parent_id: String,
    pub num_relevant: usize,
    pub num_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub prompt_id: String,
    pub mode: ClassifyMode,
    /// Vote threshold for swept rows; `None` uses the model's own verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u32>,
    pub counts: ConfusionCounts,
    pub precision: Ratio,
    pub recall: Ratio,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub prompt_id: String,
    pub init: InitialOrder,
    pub vsm: Vec<QueryEvaluation>,
    pub llm: Vec<QueryEvaluation>,
    pub map_vsm: MapScore,
    pub map_llm: MapScore,
    /// Ids appended by repair, over all queries.
    pub n_repaired: usize,
    pub n_random_fallback: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub prompt_id: String,
    pub summarized: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub dataset: String,
    pub config_digest: String,
    pub seed: u64,
    pub backend_mode: BackendMode,
    pub model: ModelSettings,
    /// Set when the model settings are the built-in defaults rather than
    /// values chosen in the config.
    pub model_settings_default: bool,
    pub prompt_ids: Vec<String>,
    pub queries: Vec<QueryInfo>,
    pub n_candidate_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SummaryStats>,
    pub classification: Vec<ClassificationMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingMetrics>,
}

impl MetricsReport {
    /// Pretty JSON with a trailing newline; stable for equal reports.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn pct(r: &Ratio) -> String {
    if r.zero_denominator {
        "n/a".to_string()
    } else {
        format!("{:.1}%", r.value * 100.0)
    }
}

/// Markdown tables in the classification (Prompt, Precision, Recall, TP,
/// TN, FP, FN) and ranking (Dataset, MAP-VSM, MAP-VSM+LLM) layouts.
pub fn render_tables(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} on {}\n", report.experiment, report.dataset);
    let _ = writeln!(
        out,
        "backend {}, model {}, temperature {}, seed {}, config {}\n",
        report.backend_mode,
        report.model.model_id,
        report.model.temperature,
        report.seed,
        &report.config_digest[..12.min(report.config_digest.len())]
    );
    if !report.classification.is_empty() {
        out.push_str("| Prompt | Precision | Recall | TP | TN | FP | FN |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for row in &report.classification {
            let label = match row.threshold {
                Some(k) => format!("{} (votes >= {k})", row.prompt_id),
                None => row.prompt_id.clone(),
            };
            let c = &row.counts;
            let _ = writeln!(
                out,
                "| {label} | {} | {} | {} | {} | {} | {} |",
                pct(&row.precision),
                pct(&row.recall),
                c.tp,
                c.tn,
                c.fp,
                c.fn_
            );
        }
        out.push('\n');
    }
    if let Some(r) = &report.ranking {
        out.push_str("| Dataset | MAP-VSM | MAP-VSM+LLM |\n|---|---|---|\n");
        let _ = writeln!(
            out,
            "| {} | {:.1}% | {:.1}% |",
            report.dataset,
            r.map_vsm.map * 100.0,
            r.map_llm.map * 100.0
        );
        if r.map_llm.n_excluded > 0 {
            let _ = writeln!(out, "\n{} queries without true links excluded from MAP", r.map_llm.n_excluded);
        }
    }
    out
}

/// Confusion row for one set of outcomes, against the dataset's true links.
pub fn classification_row(
    dataset: &TraceDataset,
    prompt_id: &str,
    mode: ClassifyMode,
    threshold: Option<u32>,
    outcomes: &[ClassificationOutcome],
    n_failed: usize,
) -> Result<ClassificationMetrics, ExperimentError> {
    let predictions = match threshold {
        Some(k) => pipeline::threshold_by_votes(outcomes, k).map_err(|source| ExperimentError::Stage {
            stage: "eval",
            source,
        })?,
        None => outcomes.iter().map(|o| (o.pair(), o.predicted)).collect(),
    };
    let counts = metrics::confusion(predictions.iter().map(|(p, y)| (p, *y)), dataset.true_links())?;
    Ok(ClassificationMetrics {
        prompt_id: prompt_id.to_string(),
        mode,
        threshold,
        precision: metrics::precision(&counts),
        recall: metrics::recall(&counts),
        counts,
        n_failed,
    })
}

/// TF-IDF statistics over both layers of the dataset.
pub fn dataset_idf(dataset: &TraceDataset) -> IdfTable {
    let docs: Vec<&Artifact> = dataset.parents().chain(dataset.children()).collect();
    vsm::fit_corpus(docs).expect("a dataset has at least one artifact")
}

/// VSM baseline and LLM APs for ranking outcomes of the given queries.
pub fn ranking_metrics(
    queries: &[TraceQuery],
    idf: &IdfTable,
    prompt_id: &str,
    init: InitialOrder,
    outcomes: &[RankingOutcome],
    n_failed: usize,
) -> Result<RankingMetrics, ExperimentError> {
    let mut vsm = Vec::new();
    for q in queries {
        let order: Vec<String> = vsm::vsm_rank(q, idf).into_iter().map(|(id, _)| id).collect();
        vsm.push(QueryEvaluation::evaluate(q.parent.id(), &order, &q.relevant_ids)?);
    }
    let mut llm = Vec::new();
    for o in outcomes {
        let relevant = queries
            .iter()
            .find(|q| q.parent.id() == o.parent_id)
            .map(|q| q.relevant_ids.clone())
            .unwrap_or_default();
        llm.push(QueryEvaluation::evaluate(&o.parent_id, &o.final_order, &relevant)?);
    }
    Ok(RankingMetrics {
        prompt_id: prompt_id.to_string(),
        init,
        map_vsm: metrics::map_score(&vsm)?,
        map_llm: metrics::map_score(&llm)?,
        vsm,
        llm,
        n_repaired: outcomes.iter().map(|o| o.repaired.len()).sum(),
        n_random_fallback: outcomes.iter().filter(|o| o.random_fallback).count(),
        n_failed,
    })
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: MetricsReport,
    pub output_dir: PathBuf,
    /// Archive written by live, cached and synthetic runs.
    pub archive_path: Option<PathBuf>,
}

fn output_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(output_err(path))
}

fn stage(stage: &'static str) -> impl Fn(PipelineError) -> ExperimentError {
    move |source| ExperimentError::Stage { stage, source }
}

fn load_archive(path: &Path) -> Result<ReplayArchive, ExperimentError> {
    ReplayArchive::load(path).map_err(ExperimentError::Backend)
}

fn build_gateway<'a>(
    config: &ExperimentConfig,
    base: &Path,
    responder: &'a SyntheticResponder,
) -> Result<Gateway<'a>, ExperimentError> {
    let b = &config.backend;
    let archive = b.archive.as_ref().map(|p| base.join(p));
    let timeout = Duration::from_secs(b.timeout_secs);
    let gateway = match b.mode {
        BackendMode::Live => Gateway::new(Box::new(LiveBackend::from_env(timeout).map_err(ExperimentError::Backend)?)),
        BackendMode::Cached => {
            let path = archive.expect("validated");
            let existing = if path.exists() { load_archive(&path)? } else { ReplayArchive::new() };
            Gateway::new(Box::new(LiveBackend::from_env(timeout).map_err(ExperimentError::Backend)?))
                .with_cache(existing, Some(path))
        }
        BackendMode::Replay => Gateway::replay(load_archive(&archive.expect("validated"))?),
        BackendMode::Synthetic => Gateway::borrowed(responder),
    };
    Ok(gateway.with_concurrency(b.concurrency))
}

/// Runs every configured stage and writes outputs under the config's
/// `output_dir`. Relative paths in the config resolve against its directory.
pub fn run_experiment(config_path: &Path) -> Result<ExperimentRun, ExperimentError> {
    let config = ExperimentConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    run_config(&config, base)
}

pub fn run_config(config: &ExperimentConfig, base: &Path) -> Result<ExperimentRun, ExperimentError> {
    let dataset_dir = base.join(&config.dataset);
    let mut dataset = corpus::load_dataset(&dataset_dir).map_err(|e| match e {
        CorpusError::MissingDescriptor(_) => invalid("dataset", e.to_string()),
        other => ExperimentError::Dataset(other),
    })?;
    let output_dir = base.join(&config.output_dir);
    fs::create_dir_all(&output_dir).map_err(output_err(&output_dir))?;

    // the synthetic responder sees the dataset as loaded, before summaries
    let responder = SyntheticResponder::new(&dataset);
    let gateway = build_gateway(config, base, &responder)?;
    let options = config.run_options();
    let seed = config.sampling.seed.unwrap_or(config.seed);

    let mut prompt_ids = Vec::new();
    let mut summary = None;
    if let (Some(s), true) = (&config.summarize, dataset.child_is_code()) {
        let template = prompting::find_template(&s.prompt).expect("validated");
        let run = pipeline::summarize_code(&dataset, &gateway, &template, &options).map_err(stage("summarize"))?;
        let dir = output_dir.join(SUMMARIZED_DIR);
        corpus::save_dataset(&run.dataset, &dir)?;
        prompt_ids.push(s.prompt.clone());
        if let (Some(first), ErrorPolicy::Abort) = (run.failures.first(), options.on_error) {
            return Err(ExperimentError::Stage {
                stage: "summarize",
                source: PipelineError::Records {
                    path: dir.display().to_string(),
                    message: format!("{} artifacts failed, first: {}: {}", run.failures.len(), first.parent_id, first.error),
                },
            });
        }
        summary = Some(SummaryStats {
            prompt_id: s.prompt.clone(),
            summarized: run.summarized.len(),
            failed: run.failures.len(),
        });
        dataset = run.dataset;
    }

    let (parent_ids, categories): (Vec<String>, Vec<Option<String>>) = match &config.sampling.parents {
        Some(ids) => (ids.clone(), vec![None; ids.len()]),
        None => {
            let sample = sampler::sample_parents(&dataset, seed)?;
            sample
                .picks
                .iter()
                .map(|p| (p.parent_id.clone(), Some(p.category.label().to_string())))
                .unzip()
        }
    };
    let queries = corpus::build_queries(&dataset, &parent_ids).map_err(|e| match e {
        CorpusError::UnknownParent(_) => invalid("sampling.parents", e.to_string()),
        other => ExperimentError::Dataset(other),
    })?;
    let query_info: Vec<QueryInfo> = queries
        .iter()
        .zip(categories)
        .map(|(q, category)| QueryInfo {
            category,
            parent_id: q.parent.id().to_string(),
            num_relevant: q.relevant_ids.len(),
            num_candidates: q.candidates.len(),
        })
        .collect();

    let mut classification = Vec::new();
    for c in &config.classification {
        let template = prompting::find_template(&c.prompt).expect("validated");
        let run = pipeline::classify_pairs(&queries, &template, &gateway, c.mode, &options)
            .map_err(stage("classify"))?;
        let path = output_dir.join(format!("classification-{}.jsonl", c.prompt));
        let records: Vec<OutcomeRecord> = run.outcomes.iter().cloned().map(OutcomeRecord::Classification).collect();
        pipeline::write_ndjson(&path, &records).map_err(stage("classify"))?;
        let failed = run.failures.len();
        classification.push(classification_row(&dataset, &c.prompt, c.mode, None, &run.outcomes, failed)?);
        for &k in &c.thresholds {
            classification.push(classification_row(&dataset, &c.prompt, c.mode, Some(k), &run.outcomes, failed)?);
        }
        if !prompt_ids.contains(&c.prompt) {
            prompt_ids.push(c.prompt.clone());
        }
    }

    let ranking = match &config.ranking {
        Some(r) => {
            let template = prompting::find_template(&r.prompt).expect("validated");
            let idf = dataset_idf(&dataset);
            let run = pipeline::rank_queries(&queries, &idf, &template, &gateway, seed, r.init, &options)
                .map_err(stage("rank"))?;
            let path = output_dir.join(RANKING_OUTCOMES_FILE);
            let records: Vec<OutcomeRecord> = run.outcomes.iter().cloned().map(OutcomeRecord::Ranking).collect();
            pipeline::write_ndjson(&path, &records).map_err(stage("rank"))?;
            prompt_ids.push(r.prompt.clone());
            Some(ranking_metrics(&queries, &idf, &r.prompt, r.init, &run.outcomes, run.failures.len())?)
        }
        None => None,
    };

    let archive_path = match config.backend.mode {
        BackendMode::Live | BackendMode::Synthetic => {
            let path = config
                .backend
                .archive
                .as_ref()
                .map_or_else(|| output_dir.join(RECORDED_ARCHIVE_FILE), |p| base.join(p));
            gateway.recorded().save(&path).map_err(ExperimentError::Backend)?;
            Some(path)
        }
        BackendMode::Cached => config.backend.archive.as_ref().map(|p| base.join(p)),
        BackendMode::Replay => None,
    };

    let report = MetricsReport {
        experiment: config.name.clone(),
        dataset: dataset.name().to_string(),
        config_digest: config.digest(),
        seed,
        backend_mode: config.backend.mode,
        model_settings_default: config.model == ModelSettings::default(),
        model: config.model.clone(),
        prompt_ids,
        n_candidate_pairs: queries.iter().map(|q| q.candidates.len()).sum(),
        queries: query_info,
        summary,
        classification,
        ranking,
    };
    write_file(&output_dir.join(REPORT_FILE), &report.to_json())?;
    write_file(&output_dir.join(TABLE_FILE), &render_tables(&report))?;
    Ok(ExperimentRun {
        report,
        output_dir,
        archive_path,
    })
}

/// Relevant ids per parent, for evaluating outcome files outside a run.
pub fn relevant_ids(dataset: &TraceDataset, parent_id: &str) -> BTreeSet<String> {
    dataset
        .true_links()
        .iter()
        .filter(|l| l.parent == parent_id)
        .map(|l| l.child.clone())
        .collect()
}
