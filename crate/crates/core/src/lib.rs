//! Requirements-to-artifact traceability recovery with LLM prompts.
//!
//! The pipeline loads a two-layer dataset, samples parents, builds one query
//! per parent, and then either classifies each (parent, child) pair or ranks
//! all children per parent, starting from a VSM baseline order.

pub mod corpus;
pub mod experiment;
pub mod gateway;
pub mod metrics;
pub mod parsing;
pub mod pipeline;
pub mod prompting;
pub mod sampler;
pub mod seeded;
pub mod synthetic;
pub mod vsm;

pub use corpus::{build_queries, load_dataset, save_dataset, Artifact, CorpusError, DatasetMeta, Layer, LinkPair, TraceDataset, TraceQuery};
pub use gateway::{Backend, Completion, CompletionRequest, Gateway, GatewayError, ModelSettings, ReplayArchive};
pub use metrics::{average_precision, confusion, map_score, precision, recall, ConfusionCounts, MapScore, MetricsError, QueryEvaluation, Ratio};
pub use parsing::{parse_ranking, parse_tagged, parse_yes_no, ParseError, RankingRepair};
pub use pipeline::{ClassificationOutcome, ClassifyMode, ErrorPolicy, InitialOrder, PipelineError, RankingOutcome, RunOptions};
pub use prompting::{PromptError, PromptTemplate, ResponseSchema};
pub use sampler::{sample_parents, Category, ParentSample, SampleError};
pub use vsm::{fit_corpus, vsm_rank, IdfTable};
