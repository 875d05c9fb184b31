use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use tracebench_core::corpus::{build_queries, load_dataset, save_dataset, DatasetMeta, LinkPair, TraceDataset};
use tracebench_core::gateway::{CompletionRequest, ModelSettings};
use tracebench_core::metrics::{average_precision, confusion};
use tracebench_core::parsing::{parse_ranking, ParseError};
use tracebench_core::prompting::{catalog, render_pair, PromptTemplate};
use tracebench_core::sampler::{sample_parents, Category};
use tracebench_core::vsm::{fit_corpus, vsm_rank};

fn ids(n: usize) -> BTreeSet<String> {
    (0..n).map(|i| format!("C{i}")).collect()
}

/// A ranking of `n` ids with relevance flags, in ranked order.
fn ranked() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 1..30).prop_filter("needs a relevant item", |v| v.contains(&true))
}

fn ap_of(flags: &[bool]) -> f64 {
    let ranking: Vec<String> = (0..flags.len()).map(|i| format!("C{i}")).collect();
    let relevant = flags
        .iter()
        .enumerate()
        .filter(|(_, r)| **r)
        .map(|(i, _)| format!("C{i}"))
        .collect();
    average_precision(&ranking, &relevant).unwrap()
}

const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "sensor", "queue", "error", "memory", "the", "a"];

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..12).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn parse_ranking_always_permutes(
        n in 1usize..25,
        tokens in prop::collection::vec(prop_oneof![
            (0usize..30).prop_map(|i| format!("C{i}")),
            (0usize..30).prop_map(|i| format!("\"C{i}\"")),
            "[a-z ]{0,6}",
        ], 0..40),
        sep in prop::sample::select(vec![", ", ",", "\n", " , "]),
        seed in any::<u64>(),
    ) {
        let expected = ids(n);
        let response = tokens.join(sep);
        let repair = match parse_ranking(&response, &expected, seed) {
            Ok(r) => r,
            Err(ParseError::EmptyResponse { fallback }) => fallback,
            Err(e) => panic!("{e:?}"),
        };
        let got: BTreeSet<String> = repair.order.iter().cloned().collect();
        prop_assert_eq!(repair.order.len(), n);
        prop_assert_eq!(got, expected);
        prop_assert_eq!(&repair.order[n - repair.appended.len()..], &repair.appended[..]);
    }

    #[test]
    fn confusion_ignores_order(preds in prop::collection::vec(any::<bool>(), 0..40), truth_mask in any::<u64>(), seed in any::<u64>()) {
        let pairs: Vec<(LinkPair, bool)> = preds
            .iter()
            .enumerate()
            .map(|(i, p)| (LinkPair::new("P", format!("C{i}")), *p))
            .collect();
        let truth: BTreeSet<LinkPair> = (0..preds.len())
            .filter(|i| truth_mask >> (i % 64) & 1 == 1)
            .map(|i| LinkPair::new("P", format!("C{i}")))
            .collect();
        let mut shuffled = pairs.clone();
        tracebench_core::seeded::SeededRng::new(seed).shuffle(&mut shuffled);
        let a = confusion(pairs.iter().map(|(p, b)| (p, *b)), &truth).unwrap();
        let b = confusion(shuffled.iter().map(|(p, b)| (p, *b)), &truth).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.total(), preds.len() as u64);
    }

    #[test]
    fn ap_is_one_iff_relevant_first(flags in ranked()) {
        let ap = ap_of(&flags);
        let first_irrelevant = flags.iter().position(|r| !r).unwrap_or(flags.len());
        let relevant_first = flags[first_irrelevant..].iter().all(|r| !r);
        prop_assert!((0.0..=1.0).contains(&ap));
        prop_assert_eq!(ap == 1.0, relevant_first);
    }

    #[test]
    fn promoting_a_relevant_item_never_lowers_ap(flags in ranked(), at in any::<prop::sample::Index>()) {
        let i = at.index(flags.len());
        prop_assume!(i + 1 < flags.len() && !flags[i] && flags[i + 1]);
        let mut swapped = flags.clone();
        swapped.swap(i, i + 1);
        prop_assert!(ap_of(&swapped) >= ap_of(&flags));
    }

    #[test]
    fn vectors_are_non_negative_with_consistent_norm(docs in prop::collection::vec(text(), 1..8), probe in text()) {
        let dataset = TraceDataset::new(
            DatasetMeta::new("p"),
            [("P".to_string(), probe.clone())],
            docs.iter().enumerate().map(|(i, d)| (format!("C{i}"), d.clone())),
            [],
        ).unwrap();
        let idf = fit_corpus(dataset.parents().chain(dataset.children())).unwrap();
        let v = idf.vector(&probe);
        prop_assert!(v.weights().values().all(|w| *w >= 0.0));
        let norm = v.weights().values().map(|w| w * w).sum::<f64>().sqrt();
        prop_assert!((norm - v.norm()).abs() < 1e-12);

        let query = &build_queries(&dataset, &["P"]).unwrap()[0];
        let ranked = vsm_rank(query, &idf);
        prop_assert_eq!(ranked.len(), docs.len());
        for w in ranked.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        prop_assert!(ranked.iter().all(|(_, s)| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn sampler_invariants(counts in prop::collection::vec(0usize..7, 5..16), seed in any::<u64>()) {
        let n_children = 8;
        let links: Vec<LinkPair> = counts
            .iter()
            .enumerate()
            .flat_map(|(p, &k)| (0..k).map(move |c| LinkPair::new(format!("P{p:02}"), format!("C{c}"))))
            .collect();
        let dataset = TraceDataset::new(
            DatasetMeta::new("s"),
            (0..counts.len()).map(|p| (format!("P{p:02}"), "text".to_string())),
            (0..n_children).map(|c| (format!("C{c}"), "text".to_string())),
            links,
        ).unwrap();
        let Ok(sample) = sample_parents(&dataset, seed) else { return Ok(()) };
        prop_assert_eq!(&sample_parents(&dataset, seed).unwrap(), &sample);
        let picked: BTreeSet<&str> = sample.picks.iter().map(|p| p.parent_id.as_str()).collect();
        prop_assert_eq!(picked.len(), 5);
        let cats: Vec<Category> = sample.picks.iter().map(|p| p.category).collect();
        prop_assert_eq!(cats, vec![Category::Min, Category::Median, Category::Median, Category::Median, Category::Max]);
        prop_assert_eq!(sample.picks[0].link_count, *counts.iter().min().unwrap());
        prop_assert_eq!(sample.picks[4].link_count, *counts.iter().max().unwrap());
        for p in &sample.picks[1..4] {
            prop_assert!(p.link_count.abs_diff(sample.median_count) <= sample.median_band);
            prop_assert_eq!(p.link_count, counts[p.parent_id[1..].parse::<usize>().unwrap()]);
        }
    }

    #[test]
    fn digest_tracks_content(prompt in ".{0,80}", other in ".{0,80}", attempt in 0u32..3) {
        let settings = ModelSettings::default();
        let a = CompletionRequest::new(prompt.clone(), &settings);
        let via_json: CompletionRequest = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        prop_assert_eq!(a.digest(), via_json.digest());
        prop_assert_eq!(a.digest().len(), 64);
        let b = CompletionRequest::new(other.clone(), &settings);
        prop_assert_eq!(a.digest() == b.digest(), prompt == other);
        let mut reask = a.clone();
        reask.attempt = attempt;
        prop_assert_eq!(reask.digest() == a.digest(), attempt == 0);
    }

    #[test]
    fn rendered_pair_contains_both_bodies(source in "[a-z {}]{1,40}", target in "[a-z {}]{1,40}", pick in any::<prop::sample::Index>()) {
        let templates: Vec<PromptTemplate> = catalog()
            .into_iter()
            .filter(|t| t.body().contains("{source_body}") && t.body().contains("{target_body}"))
            .collect();
        let template = pick.get(&templates);
        prop_assert_eq!(&PromptTemplate::parse(&template.to_file_string()).unwrap(), template);
        let dataset = TraceDataset::new(
            DatasetMeta::new("r"),
            [("S".to_string(), source.clone())],
            [("T".to_string(), target.clone())],
            [],
        );
        // bodies that are all whitespace are rejected at construction
        let Ok(dataset) = dataset else { return Ok(()) };
        let rendered = render_pair(template, dataset.parent("S").unwrap(), dataset.child("T").unwrap()).unwrap();
        let (before, after) = template.body().split_once("{source_body}").unwrap();
        let (middle, tail) = after.split_once("{target_body}").unwrap();
        prop_assert_eq!(rendered, format!("{before}{source}{middle}{target}{tail}"));
    }

    #[test]
    fn dataset_survives_disk(bodies in prop::collection::btree_map("[A-Z][0-9]{1,3}", "[a-z]{1,10}( [a-z]{1,10}){0,5}\n?", 1..8), mask in any::<u32>()) {
        let children: BTreeMap<String, String> = bodies.iter().map(|(k, v)| (format!("C-{k}"), v.clone())).collect();
        let links: Vec<LinkPair> = children
            .keys()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, c)| LinkPair::new("P-1", c.clone()))
            .collect();
        let dataset = TraceDataset::new(
            DatasetMeta::new("disk"),
            [("P-1".to_string(), "parent text".to_string())],
            children,
            links,
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&dataset, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), dataset);
    }
}
