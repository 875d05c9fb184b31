use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use tracebench_core::corpus::{self, CorpusError, TraceDataset, TraceQuery};
use tracebench_core::experiment::{self, ExperimentConfig, ExperimentError, MetricsReport};
use tracebench_core::gateway::{Gateway, LiveBackend, ModelSettings, ReplayArchive};
use tracebench_core::pipeline::{
    self, ClassificationOutcome, ClassifyMode, ErrorPolicy, InitialOrder, OutcomeRecord, PipelineError, RankingOutcome,
    RunOptions,
};
use tracebench_core::prompting::{self, PromptError};
use tracebench_core::sampler;
use tracebench_core::synthetic::SyntheticResponder;
use tracebench_core::vsm;

#[derive(Parser)]
#[command(name = "tracebench", version, about = "Trace link recovery experiments with LLM prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset, print its sizes, optionally write a normalized copy.
    Ingest {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the min / median / max parents by link count.
    Sample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inspect the prompt catalog.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
    /// Replace code children with model summaries.
    Summarize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "summarize-code-v1")]
        prompt: String,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Classify every (parent, child) pair of the selected queries.
    Classify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value = "simple")]
        mode: ClassifyMode,
        #[command(flatten)]
        queries: QueryArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Outcome file (NDJSON); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank all children per query, by VSM alone or VSM then LLM.
    Rank {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "llm")]
        strategy: Strategy,
        #[arg(long, default_value = "rank-v1")]
        prompt: String,
        #[arg(long, default_value = "vsm")]
        init: InitialOrder,
        #[command(flatten)]
        queries: QueryArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an outcome file against the dataset's true links.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        /// Vote thresholds to sweep over multi-question outcomes.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<u32>,
    },
    /// Render a report file as tables.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PromptsCommand {
    List,
    Show { id: String },
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Strategy {
    Vsm,
    Llm,
}

#[derive(Args)]
struct QueryArgs {
    /// Explicit parent ids, comma separated; sampled when omitted.
    #[arg(long, value_delimiter = ',')]
    parents: Vec<String>,
    /// Seed for parent sampling and ranking repair.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BackendArgs {
    /// live | synthetic | replay:PATH | cached:PATH
    #[arg(long, default_value = "synthetic")]
    backend: BackendSpec,
    /// Write every served completion to this archive.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Keep going past failed items instead of aborting.
    #[arg(long)]
    skip_errors: bool,
    /// Re-asks after an unparseable response (at most 2).
    #[arg(long, default_value_t = 0)]
    reask: u32,
    /// Accept a random order when a ranking names no candidate.
    #[arg(long)]
    random_fallback: bool,
}

#[derive(Clone)]
enum BackendSpec {
    Live,
    Synthetic,
    Replay(PathBuf),
    Cached(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "live" => Ok(BackendSpec::Live),
            None if s == "synthetic" => Ok(BackendSpec::Synthetic),
            Some(("replay", path)) if !path.is_empty() => Ok(BackendSpec::Replay(path.into())),
            Some(("cached", path)) if !path.is_empty() => Ok(BackendSpec::Cached(path.into())),
            _ => Err(format!("unknown backend {s:?} (expected live, synthetic, replay:PATH or cached:PATH)")),
        }
    }
}

impl BackendArgs {
    fn options(&self) -> RunOptions {
        let defaults = ModelSettings::default();
        RunOptions {
            model: ModelSettings {
                model_id: self.model.clone().unwrap_or(defaults.model_id),
                temperature: self.temperature.unwrap_or(defaults.temperature),
                max_output_tokens: self.max_tokens.unwrap_or(defaults.max_output_tokens),
            },
            on_error: if self.skip_errors { ErrorPolicy::SkipErrors } else { ErrorPolicy::Abort },
            reask: self.reask,
            random_fallback: self.random_fallback,
        }
    }

    fn gateway<'a>(&self, responder: &'a SyntheticResponder) -> Result<Gateway<'a>, CliError> {
        let timeout = Duration::from_secs(self.timeout_secs);
        let live = || LiveBackend::from_env(timeout).map_err(CliError::config);
        let gateway = match &self.backend {
            BackendSpec::Live => Gateway::new(Box::new(live()?)),
            BackendSpec::Synthetic => Gateway::borrowed(responder),
            BackendSpec::Replay(path) => Gateway::replay(ReplayArchive::load(path).map_err(CliError::config)?),
            BackendSpec::Cached(path) => {
                let archive = if path.exists() {
                    ReplayArchive::load(path).map_err(CliError::config)?
                } else {
                    ReplayArchive::new()
                };
                Gateway::new(Box::new(live()?)).with_cache(archive, Some(path.clone()))
            }
        };
        Ok(gateway.with_concurrency(self.concurrency))
    }

    fn save_recording(&self, gateway: &Gateway) -> Result<(), CliError> {
        if let Some(path) = &self.record {
            gateway.recorded().save(path).map_err(CliError::other)?;
        }
        Ok(())
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(e: impl ToString) -> Self {
        Self { code: 2, message: e.to_string() }
    }

    fn other(e: impl ToString) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self {
            code: experiment::pipeline_exit_code(&e) as u8,
            message: e.to_string(),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::MissingDescriptor(_) | CorpusError::UnknownParent(_) => CliError::config(e),
            other => CliError::other(other),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::config(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::other(e)
    }
}

fn queries(dataset: &TraceDataset, args: &QueryArgs) -> Result<Vec<TraceQuery>, CliError> {
    let ids = if args.parents.is_empty() {
        sampler::sample_parents(dataset, args.seed).map_err(CliError::other)?.ids()
    } else {
        args.parents.clone()
    };
    Ok(corpus::build_queries(dataset, &ids)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json_line(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { dataset, out } => {
            let ds = corpus::load_dataset(&dataset)?;
            println!("name: {}", ds.name());
            println!("parents: {}", ds.parents().len());
            println!("children: {}", ds.children().len());
            println!("true_links: {}", ds.true_links().len());
            println!("child_is_code: {}", ds.child_is_code());
            if let Some(out) = out {
                corpus::save_dataset(&ds, &out)?;
            }
        }
        Command::Sample { dataset, seed } => {
            let ds = corpus::load_dataset(&dataset)?;
            let sample = sampler::sample_parents(&ds, seed).map_err(CliError::other)?;
            for pick in &sample.picks {
                println!("{}:{}", pick.category.label(), pick.parent_id);
            }
        }
        Command::Prompts { command } => match command {
            PromptsCommand::List => {
                for t in prompting::catalog() {
                    println!("{}\t{}\t{}", t.id(), t.schema().name(), t.description());
                }
            }
            PromptsCommand::Show { id } => print!("{}", prompting::find_template(&id)?.to_file_string()),
        },
        Command::Summarize { dataset, out, prompt, backend } => {
            let ds = corpus::load_dataset(&dataset)?;
            let template = prompting::find_template(&prompt)?;
            let responder = SyntheticResponder::new(&ds);
            let gateway = backend.gateway(&responder)?;
            let run = pipeline::summarize_code(&ds, &gateway, &template, &backend.options())?;
            // partial results are kept even when some artifacts failed
            corpus::save_dataset(&run.dataset, &out)?;
            backend.save_recording(&gateway)?;
            println!("summarized: {}", run.summarized.len());
            for f in &run.failures {
                eprintln!("failed {}: {}", f.parent_id, f.error);
            }
            if !run.failures.is_empty() && !backend.skip_errors {
                return Err(CliError {
                    code: 3,
                    message: format!("{} artifacts could not be summarized", run.failures.len()),
                });
            }
        }
        Command::Classify { dataset, prompt, mode, queries: q, backend, out } => {
            let ds = corpus::load_dataset(&dataset)?;
            let template = prompting::find_template(&prompt)?;
            let queries = queries(&ds, &q)?;
            let responder = SyntheticResponder::new(&ds);
            let gateway = backend.gateway(&responder)?;
            let run = pipeline::classify_pairs(&queries, &template, &gateway, mode, &backend.options());
            backend.save_recording(&gateway)?;
            let run = run?;
            for f in &run.failures {
                eprintln!("skipped ({}, {}): {}", f.parent_id, f.child_id.as_deref().unwrap_or(""), f.error);
            }
            let records: Vec<OutcomeRecord> = run.outcomes.into_iter().map(OutcomeRecord::Classification).collect();
            emit(out.as_deref(), &pipeline::to_ndjson(&records))?;
        }
        Command::Rank { dataset, strategy, prompt, init, queries: q, backend, out } => {
            let ds = corpus::load_dataset(&dataset)?;
            let queries = queries(&ds, &q)?;
            let idf = experiment::dataset_idf(&ds);
            match strategy {
                Strategy::Vsm => {
                    let mut text = String::new();
                    for query in &queries {
                        text.push_str(&format!("# {}\nrank,child_id,score\n", query.parent.id()));
                        for (i, (id, score)) in vsm::vsm_rank(query, &idf).iter().enumerate() {
                            text.push_str(&format!("{},{id},{score:.6}\n", i + 1));
                        }
                    }
                    emit(out.as_deref(), &text)?;
                }
                Strategy::Llm => {
                    let template = prompting::find_template(&prompt)?;
                    let responder = SyntheticResponder::new(&ds);
                    let gateway = backend.gateway(&responder)?;
                    let run =
                        pipeline::rank_queries(&queries, &idf, &template, &gateway, q.seed, init, &backend.options());
                    backend.save_recording(&gateway)?;
                    let run = run?;
                    for f in &run.failures {
                        eprintln!("skipped {}: {}", f.parent_id, f.error);
                    }
                    let records: Vec<OutcomeRecord> = run.outcomes.into_iter().map(OutcomeRecord::Ranking).collect();
                    emit(out.as_deref(), &pipeline::to_ndjson(&records))?;
                }
            }
        }
        Command::Eval { dataset, outcomes, thresholds } => {
            let ds = corpus::load_dataset(&dataset)?;
            let records: Vec<OutcomeRecord> = pipeline::read_ndjson(&outcomes)?;
            print!("{}", json_line(&evaluate(&ds, records, &thresholds)?));
        }
        Command::Report { report } => {
            let text = fs::read_to_string(&report)?;
            let report = MetricsReport::from_json(&text).map_err(CliError::config)?;
            print!("{}", experiment::render_tables(&report));
        }
        Command::Run { config, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = std::path::absolute(dir)?;
            }
            let base = config.parent().unwrap_or(Path::new("."));
            let run = experiment::run_config(&cfg, base)?;
            print!("{}", experiment::render_tables(&run.report));
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct Evaluation {
    classification: Vec<experiment::ClassificationMetrics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    ranking: Vec<experiment::RankingMetrics>,
}

fn evaluate(ds: &TraceDataset, records: Vec<OutcomeRecord>, thresholds: &[u32]) -> Result<Evaluation, CliError> {
    let mut by_prompt: BTreeMap<String, Vec<ClassificationOutcome>> = BTreeMap::new();
    let mut rankings: BTreeMap<String, Vec<RankingOutcome>> = BTreeMap::new();
    for r in records {
        match r {
            OutcomeRecord::Classification(o) => by_prompt.entry(o.prompt_id.clone()).or_default().push(o),
            OutcomeRecord::Ranking(o) => rankings.entry(o.prompt_id.clone()).or_default().push(o),
        }
    }
    let mut classification = Vec::new();
    for (prompt, outcomes) in &by_prompt {
        let mode = outcomes[0].mode;
        let voted = outcomes.iter().all(|o| o.votes.is_some());
        classification.push(experiment::classification_row(ds, prompt, mode, None, outcomes, 0)?);
        if voted {
            for &k in thresholds {
                classification.push(experiment::classification_row(ds, prompt, mode, Some(k), outcomes, 0)?);
            }
        }
    }
    let idf = experiment::dataset_idf(ds);
    let mut ranking = Vec::new();
    for (prompt, outcomes) in &rankings {
        let ids: Vec<&str> = outcomes.iter().map(|o| o.parent_id.as_str()).collect();
        let queries = corpus::build_queries(ds, &ids)?;
        ranking.push(experiment::ranking_metrics(&queries, &idf, prompt, outcomes[0].init, outcomes, 0)?);
    }
    Ok(Evaluation { classification, ranking })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
