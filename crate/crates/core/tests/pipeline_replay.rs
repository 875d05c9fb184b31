use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};

use tracebench_core::corpus::{build_queries, load_dataset, DatasetMeta, LinkPair, TraceDataset, TraceQuery};
use tracebench_core::gateway::{CompletionRequest, FnBackend, Gateway, GatewayError, ReplayArchive};
use tracebench_core::metrics::confusion;
use tracebench_core::pipeline::{
    classify_pairs, rank_queries, rank_query, summarize_code, threshold_by_votes, ClassifyMode, ErrorPolicy,
    InitialOrder, PipelineError, RunOptions,
};
use tracebench_core::prompting::find_template;
use tracebench_core::sampler::sample_parents;
use tracebench_core::vsm::{fit_corpus, IdfTable};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn links_fixture() -> (TraceDataset, Gateway<'static>) {
    let root = fixtures().join("cm1-links");
    let dataset = load_dataset(root.join("dataset")).unwrap();
    let archive = ReplayArchive::load(&root.join("replay.jsonl")).unwrap();
    (dataset, Gateway::replay(archive))
}

/// Query restricted to the single child with the same index.
fn link_query(dataset: &TraceDataset, n: usize) -> Vec<TraceQuery> {
    let mut q = build_queries(dataset, &[format!("HLR-{n}")]).unwrap();
    q[0].candidates.retain(|c| c.id() == format!("LLR-{n}"));
    q
}

fn idf_of(dataset: &TraceDataset) -> IdfTable {
    fit_corpus(dataset.parents().chain(dataset.children())).unwrap()
}

fn fn_gateway<F>(f: F) -> Gateway<'static>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
{
    Gateway::new(Box::new(FnBackend::new("test", f)))
}

#[test]
fn link4_simple_prompt_is_a_false_positive() {
    let (dataset, gateway) = links_fixture();
    let queries = link_query(&dataset, 4);
    let run = classify_pairs(
        &queries,
        &find_template("cm1-q4").unwrap(),
        &gateway,
        ClassifyMode::Simple,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(run.outcomes.len(), 1);
    assert!(run.outcomes[0].predicted);
    let pairs: Vec<(LinkPair, bool)> = run.outcomes.iter().map(|o| (o.pair(), o.predicted)).collect();
    let c = confusion(pairs.iter().map(|(p, b)| (p, *b)), dataset.true_links()).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (0, 1, 0, 0));
}

#[test]
fn link5_chain_of_thought_keeps_rationale() {
    let (dataset, gateway) = links_fixture();
    let run = classify_pairs(
        &link_query(&dataset, 5),
        &find_template("cot-v1").unwrap(),
        &gateway,
        ClassifyMode::Cot,
        &RunOptions::default(),
    )
    .unwrap();
    let outcome = &run.outcomes[0];
    assert!(outcome.predicted);
    assert!(dataset.is_true_link("HLR-5", "LLR-5"));
    let rationale = outcome.rationale.as_ref().unwrap();
    assert_eq!(
        rationale["related"],
        "Both specify requirements related to processing commands within a certain time"
    );
    assert!(rationale["unrelated"].starts_with("Requirement 1 specifies a time constraint"));
}

#[test]
fn replay_miss_is_reported() {
    let (dataset, gateway) = links_fixture();
    let err = classify_pairs(
        &link_query(&dataset, 1),
        &find_template("cm1-q4").unwrap(),
        &gateway,
        ClassifyMode::Simple,
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::Gateway { source: GatewayError::ReplayMiss(_), .. }), "{err:?}");
}

#[test]
fn multi_question_votes_and_verdict_are_separate() {
    let (dataset, _) = links_fixture();
    let gateway = fn_gateway(|_| {
        Ok("<implements>yes</implements><decomposed>no</decomposed><fulfills>yes</fulfills>\
            <feature>yes</feature><capability>no</capability><related>a</related>\
            <unrelated>b</unrelated><traced>no</traced>"
            .into())
    });
    let run = classify_pairs(
        &link_query(&dataset, 2),
        &find_template("multi-question-v1").unwrap(),
        &gateway,
        ClassifyMode::MultiQuestion,
        &RunOptions::default(),
    )
    .unwrap();
    let o = &run.outcomes[0];
    assert_eq!((o.votes, o.predicted), (Some(3), false));
    let swept = threshold_by_votes(&run.outcomes, 3).unwrap();
    assert_eq!(swept, vec![(LinkPair::new("HLR-2", "LLR-2"), true)]);
    assert!(!threshold_by_votes(&run.outcomes, 4).unwrap()[0].1);
}

#[test]
fn mode_must_fit_template() {
    let (dataset, gateway) = links_fixture();
    let err = classify_pairs(
        &link_query(&dataset, 5),
        &find_template("cot-v1").unwrap(),
        &gateway,
        ClassifyMode::Simple,
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::ModeMismatch { .. }));
}

fn cm1() -> (TraceDataset, Vec<TraceQuery>, Gateway<'static>) {
    let root = fixtures().join("cm1-synthetic");
    let dataset = load_dataset(root.join("dataset")).unwrap();
    let sample = sample_parents(&dataset, 7).unwrap();
    let queries = build_queries(&dataset, &sample.ids()).unwrap();
    let archive = ReplayArchive::load(&root.join("replay.jsonl")).unwrap();
    (dataset, queries, Gateway::replay(archive))
}

#[test]
fn cm1_replay_classifies_every_pair_deterministically() {
    let (_, queries, gateway) = cm1();
    let template = find_template("cm1-q1").unwrap();
    let options = RunOptions::default();
    let first = classify_pairs(&queries, &template, &gateway, ClassifyMode::Simple, &options).unwrap();
    let second = classify_pairs(&queries, &template, &gateway, ClassifyMode::Simple, &options).unwrap();
    assert_eq!(first.outcomes.len(), 265);
    assert!(first.failures.is_empty());
    assert_eq!(first, second);
    // parent-major, candidate order
    assert_eq!(first.outcomes[0].parent_id, queries[0].parent.id());
    assert_eq!(first.outcomes[53].parent_id, queries[1].parent.id());
    assert_eq!(first.outcomes[1].child_id, "C-002");
}

#[test]
fn cm1_replay_rankings_are_permutations() {
    let (dataset, queries, gateway) = cm1();
    let idf = idf_of(&dataset);
    let run = rank_queries(
        &queries,
        &idf,
        &find_template("rank-v1").unwrap(),
        &gateway,
        7,
        InitialOrder::Vsm,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(run.outcomes.len(), 5);
    for (o, q) in run.outcomes.iter().zip(&queries) {
        let mut got = o.final_order.clone();
        got.sort();
        let want: Vec<String> = q.candidate_ids().map(String::from).collect();
        assert_eq!(got, want);
    }
    assert!(run.outcomes.iter().any(|o| !o.repaired.is_empty()));
}

fn ranking_with<F>(respond: F) -> (Vec<String>, tracebench_core::pipeline::RankingOutcome)
where
    F: Fn(&[String]) -> String + Send + Sync + 'static,
{
    let (dataset, queries, _) = cm1();
    let idf = idf_of(&dataset);
    let order = tracebench_core::pipeline::initial_order(&queries[0], &idf, InitialOrder::Vsm);
    let presented = order.clone();
    let gateway = fn_gateway(move |_| Ok(respond(&presented)));
    let outcome = rank_query(
        &queries[0],
        &idf,
        &find_template("rank-v1").unwrap(),
        &gateway,
        3,
        InitialOrder::Vsm,
        &RunOptions::default(),
    )
    .unwrap();
    (order, outcome)
}

#[test]
fn complete_ranking_is_kept_verbatim() {
    let (order, outcome) = ranking_with(|ids| ids.iter().rev().cloned().collect::<Vec<_>>().join(", "));
    let mut reversed = order.clone();
    reversed.reverse();
    assert_eq!(outcome.initial_order, order);
    assert_eq!(outcome.final_order, reversed);
    assert!(outcome.repaired.is_empty() && outcome.dropped.is_empty());
}

#[test]
fn omitted_ids_are_appended() {
    let (order, outcome) = ranking_with(|ids| ids[2..].join(", ") + ", NOT-AN-ID");
    assert_eq!(outcome.final_order[..order.len() - 2], order[2..]);
    let appended: BTreeSet<&String> = outcome.repaired.iter().collect();
    assert_eq!(appended, order[..2].iter().collect());
    assert_eq!(outcome.dropped, ["NOT-AN-ID"]);
}

#[test]
fn empty_ranking_uses_fallback_only_when_allowed() {
    let (dataset, queries, _) = cm1();
    let idf = idf_of(&dataset);
    let gateway = fn_gateway(|_| Ok("I cannot rank these.".into()));
    let template = find_template("rank-v1").unwrap();
    let strict = rank_query(&queries[0], &idf, &template, &gateway, 3, InitialOrder::Canonical, &RunOptions::default());
    assert!(matches!(strict, Err(PipelineError::Parse { .. })));
    let options = RunOptions {
        random_fallback: true,
        ..RunOptions::default()
    };
    let outcome = rank_query(&queries[0], &idf, &template, &gateway, 3, InitialOrder::Canonical, &options).unwrap();
    assert!(outcome.random_fallback);
    assert_eq!(outcome.repaired.len(), 53);
    assert_eq!(outcome.final_order, outcome.repaired);
}

fn code_dataset() -> TraceDataset {
    let mut meta = DatasetMeta::new("code");
    meta.child_is_code = true;
    let body = |name: &str| {
        format!(
            "public class {name} {{\n    private final Map<String, Integer> counts = new HashMap<>();\n\n    \
             public void record(String key) {{\n        counts.merge(key, 1, Integer::sum);\n    }}\n\n    \
             public int total() {{\n        return counts.values().stream().mapToInt(i -> i).sum();\n    }}\n}}\n"
        )
    };
    TraceDataset::new(
        meta,
        [("R1".to_string(), "The system shall count events.".to_string())],
        ["A", "B", "C"].map(|n| (n.to_string(), body(n))),
        [LinkPair::new("R1", "A")],
    )
    .unwrap()
}

#[test]
fn summarize_replaces_code_and_keeps_originals() {
    let dataset = code_dataset();
    let gateway = fn_gateway(|r| {
        assert!(r.prompt.contains("public class"));
        Ok(" Counts events by key. \n".into())
    });
    let template = find_template("summarize-code-v1").unwrap();
    let run = summarize_code(&dataset, &gateway, &template, &RunOptions::default()).unwrap();
    assert_eq!(run.summarized, ["A", "B", "C"]);
    assert!(run.failures.is_empty());
    assert_eq!(run.dataset.original_bodies().len(), 3);
    for child in run.dataset.children() {
        assert_eq!(child.body(), "Counts events by key.");
        assert!(child.body().len() < run.dataset.original_bodies()[child.id()].len());
    }
    // a second pass has nothing left to do
    let again = summarize_code(&run.dataset, &gateway, &template, &RunOptions::default()).unwrap();
    assert!(again.summarized.is_empty());
    assert_eq!(again.dataset, run.dataset);
}

#[test]
fn summarize_collects_failures() {
    let dataset = code_dataset();
    let gateway = fn_gateway(|r| {
        if r.prompt.contains("class B") {
            Err(GatewayError::Transport("reset".into()))
        } else {
            Ok("Counts.".into())
        }
    });
    let run = summarize_code(&dataset, &gateway, &find_template("summarize-code-v1").unwrap(), &RunOptions::default())
        .unwrap();
    assert_eq!(run.summarized, ["A", "C"]);
    assert_eq!(run.failures.len(), 1);
    assert_eq!(run.failures[0].parent_id, "B");
    assert!(run.dataset.child("B").unwrap().body().contains("class B"));
}

/// Answers garbage to first asks, "yes" to re-asks.
fn flaky() -> (Gateway<'static>, &'static AtomicU32) {
    let calls: &'static AtomicU32 = Box::leak(Box::new(AtomicU32::new(0)));
    let gateway = fn_gateway(move |r| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok(if r.attempt == 0 { "Perhaps.".into() } else { "Yes.".into() })
    });
    (gateway, calls)
}

#[test]
fn reask_recovers_from_malformed_response() {
    let (dataset, _) = links_fixture();
    let (gateway, calls) = flaky();
    let options = RunOptions {
        reask: 1,
        ..RunOptions::default()
    };
    let run = classify_pairs(
        &link_query(&dataset, 1),
        &find_template("cm1-q1").unwrap(),
        &gateway,
        ClassifyMode::Simple,
        &options,
    )
    .unwrap();
    assert!(run.outcomes[0].predicted);
    assert_eq!(calls.load(Ordering::SeqCst), 2);
    let mut second = CompletionRequest::new(gateway.recorded().records().next().unwrap().request.prompt.clone(), &options.model);
    second.attempt = 1;
    assert_eq!(run.outcomes[0].request_digest, second.digest());
}

#[test]
fn abort_policy_stops_on_parse_failure() {
    let (dataset, _) = links_fixture();
    let (gateway, _) = flaky();
    let queries = build_queries(&dataset, &["HLR-1"]).unwrap();
    let err = classify_pairs(
        &queries,
        &find_template("cm1-q1").unwrap(),
        &gateway,
        ClassifyMode::Simple,
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::Parse { .. }));
}

#[test]
fn skip_errors_records_failures_and_continues() {
    let (dataset, _) = links_fixture();
    let gateway = fn_gateway(|r| {
        Ok(if r.prompt.contains("Error Collection") { "Unclear.".into() } else { "No.".into() })
    });
    let queries = build_queries(&dataset, &["HLR-1", "HLR-2"]).unwrap();
    let options = RunOptions {
        on_error: ErrorPolicy::SkipErrors,
        ..RunOptions::default()
    };
    let run = classify_pairs(&queries, &find_template("cm1-q1").unwrap(), &gateway, ClassifyMode::Simple, &options)
        .unwrap();
    assert_eq!(run.outcomes.len(), 8);
    assert_eq!(run.failures.len(), 2);
    assert!(run.failures.iter().all(|f| f.child_id.as_deref() == Some("LLR-4")));
    assert!(run.outcomes.iter().all(|o| !o.predicted));
}
