use std::collections::{BTreeMap, HashMap};

use bws_core::scoring::{compute_scores, coverage_stats, ScoringError};
use bws_core::synth::{mixed_coverage, placeholder_items, simulated_corpus, uniform_log};
use bws_core::{Annotation, Corpus, ScoreRecord, Tuple4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_log_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 16 * rng.gen_range(1..4);
    let base = simulated_corpus(n, 1, 0.5, seed).unwrap().corpus;
    let counts: Vec<usize> = (0..base.tuples.len()).map(|_| rng.gen_range(1..5)).collect();
    let annotations = uniform_log(&base.tuples, &counts, 6, seed ^ 0xabc);
    Corpus { annotations, ..base }
}

/// Per-item counts by scanning the log directly.
fn brute_force_counts(c: &Corpus) -> BTreeMap<String, (u32, u32, u32)> {
    let tuples: HashMap<&str, &Tuple4> = c.tuples.iter().map(|t| (t.tuple_id.as_str(), t)).collect();
    let mut out = BTreeMap::new();
    for a in &c.annotations {
        for id in &tuples[a.tuple_id.as_str()].item_ids {
            let e = out.entry(id.clone()).or_insert((0, 0, 0));
            e.0 += 1;
            e.1 += (id == &a.best_id) as u32;
            e.2 += (id == &a.worst_id) as u32;
        }
    }
    out
}

#[test]
fn zero_sum_on_random_logs() {
    for seed in 0..100 {
        let c = random_log_corpus(seed);
        let scores = compute_scores(&c, true).unwrap();
        let net: i64 = scores.records.iter().map(ScoreRecord::net).sum();
        assert_eq!(net, 0, "seed {seed}");
        let best: u32 = scores.records.iter().map(|r| r.n_best).sum();
        let worst: u32 = scores.records.iter().map(|r| r.n_worst).sum();
        assert_eq!(best as usize, c.annotations.len());
        assert_eq!(worst as usize, c.annotations.len());
        let weighted: f64 = scores.records.iter().map(|r| r.raw * r.n_appearances as f64).sum();
        assert!(weighted.abs() < 1e-9);
        let oracle = brute_force_counts(&c);
        for r in &scores.records {
            assert_eq!(oracle[&r.item_id], (r.n_appearances, r.n_best, r.n_worst));
            assert!((-1.0..=1.0).contains(&r.raw) && (0.0..=1.0).contains(&r.scaled));
        }
    }
}

#[test]
fn permutation_invariance_over_twenty_shuffles() {
    let c = random_log_corpus(17);
    let reference = compute_scores(&c, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..20 {
        let mut shuffled = c.clone();
        shuffled.annotations.shuffle(&mut rng);
        assert_eq!(compute_scores(&shuffled, true).unwrap(), reference);
    }
}

fn record<'a>(scores: &'a [ScoreRecord], id: &str) -> &'a ScoreRecord {
    scores.iter().find(|r| r.item_id == id).unwrap()
}

/// Forces `item` to be picked best in every annotation of a tuple that
/// contains it; the worst pick moves to another member if needed.
fn force_best(annotations: &mut [Annotation], tuples: &[Tuple4], item: &str) {
    for a in annotations.iter_mut() {
        let t = tuples.iter().find(|t| t.tuple_id == a.tuple_id).unwrap();
        if t.contains(item) {
            a.best_id = item.to_string();
            if a.worst_id == item {
                a.worst_id = t.item_ids.iter().find(|id| *id != item).unwrap().clone();
            }
        }
    }
}

#[test]
fn unanimous_best_over_sixteen_judgments() {
    let mut c = simulated_corpus(16, 2, 0.7, 3).unwrap().corpus;
    let target = c.items[5].item_id.clone();
    force_best(&mut c.annotations, &c.tuples, &target);
    c.validate().unwrap();
    let r = record(&compute_scores(&c, false).unwrap().records, &target).clone();
    assert_eq!((r.n_appearances, r.n_best, r.n_worst), (16, 16, 0));
    assert_eq!((r.raw, r.scaled), (1.0, 1.0));
}

#[test]
fn never_picked_item_sits_at_midpoint() {
    let mut c = simulated_corpus(16, 2, 0.7, 4).unwrap().corpus;
    let target = c.items[9].item_id.clone();
    for a in c.annotations.iter_mut() {
        let t = c.tuples.iter().find(|t| t.tuple_id == a.tuple_id).unwrap();
        if t.contains(&target) {
            let others: Vec<&String> = t.item_ids.iter().filter(|id| **id != target).collect();
            a.best_id = others[0].clone();
            a.worst_id = others[1].clone();
        }
    }
    c.validate().unwrap();
    let r = record(&compute_scores(&c, false).unwrap().records, &target).clone();
    assert_eq!((r.n_appearances, r.n_best, r.n_worst), (16, 0, 0));
    assert_eq!((r.raw, r.scaled), (0.0, 0.5));
}

#[test]
fn two_tuple_corpus_by_hand() {
    let items = placeholder_items(7);
    let ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let id = |i: usize| ids[i].clone();
    let tuples = vec![
        Tuple4 { tuple_id: "t1".into(), item_ids: vec![id(0), id(1), id(2), id(3)] },
        Tuple4 { tuple_id: "t2".into(), item_ids: vec![id(0), id(4), id(5), id(6)] },
    ];
    let mut annotations = uniform_log(&tuples, &[2, 2], 2, 0);
    // item 0: best, best, best, worst
    let picks = [(0, 1), (0, 2), (0, 4), (5, 0)];
    for (a, (b, w)) in annotations.iter_mut().zip(picks) {
        a.best_id = id(b);
        a.worst_id = id(w);
    }
    let c = Corpus { seeds: vec![], items, tuples, annotations };
    c.validate().unwrap();
    let scores = compute_scores(&c, false).unwrap();
    let r = record(&scores.records, &id(0));
    assert_eq!((r.n_appearances, r.n_best, r.n_worst), (4, 3, 1));
    assert_eq!((r.raw, r.scaled), (0.5, 0.75));
}

#[test]
fn monotone_response_to_an_extra_best_vote() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..30 {
        let c = simulated_corpus(32, 2, 0.8, seed).unwrap().corpus;
        let before = compute_scores(&c, false).unwrap();
        let tuples: HashMap<&str, &Tuple4> = c.tuples.iter().map(|t| (t.tuple_id.as_str(), t)).collect();
        // annotations in which some member was neither best nor worst
        let neutral: Vec<(usize, String)> = c
            .annotations
            .iter()
            .enumerate()
            .flat_map(|(k, a)| {
                tuples[a.tuple_id.as_str()]
                    .item_ids
                    .iter()
                    .filter(|id| **id != a.best_id && **id != a.worst_id)
                    .map(move |id| (k, id.clone()))
            })
            .collect();
        let (k, item) = neutral.choose(&mut rng).unwrap().clone();
        let mut after = c.clone();
        after.annotations[k].best_id = item.clone();
        after.validate().unwrap();
        let after_scores = compute_scores(&after, false).unwrap();
        let (old, new) = (record(&before.records, &item), record(&after_scores.records, &item));
        assert_eq!(old.n_appearances, new.n_appearances);
        assert!(new.scaled >= old.scaled);
    }
}

#[test]
fn uncovered_items_error_unless_skipped() {
    let mut c = simulated_corpus(16, 1, 1.0, 6).unwrap().corpus;
    c.items.extend(placeholder_items(20).into_iter().skip(16));
    match compute_scores(&c, false) {
        Err(ScoringError::Uncovered(ids)) => assert_eq!(ids.len(), 4),
        other => panic!("unexpected {other:?}"),
    }
    let skipped = compute_scores(&c, true).unwrap();
    assert_eq!(skipped.uncovered.len(), 4);
    assert_eq!(skipped.records.len(), 16);
}

#[test]
fn paper_shaped_coverage() {
    let items = placeholder_items(1000);
    let ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let tuples = bws_core::design::design_tuples(&ids, &bws_core::design::DesignConfig::with_seed(8)).unwrap();
    let annotations = uniform_log(&tuples, &mixed_coverage(2000, 1285, 9), 20, 10);
    assert_eq!(annotations.len(), 5285);
    let c = Corpus { seeds: vec![], items, tuples, annotations };
    let stats = coverage_stats(&c).unwrap();
    assert_eq!(stats.fraction_at_least_three, 0.6425);
    assert_eq!(stats.fraction_at_least_two, 1.0);
    assert!(stats.judgments_per_item_min >= 16 && stats.judgments_per_item_max <= 24);
}

#[test]
fn coverage_all_twice() {
    let base = simulated_corpus(16, 2, 0.6, 11).unwrap().corpus;
    let stats = coverage_stats(&base).unwrap();
    assert_eq!((stats.fraction_at_least_three, stats.fraction_at_least_two), (0.0, 1.0));
    assert_eq!((stats.judgments_per_item_min, stats.judgments_per_item_max), (16, 16));
}

#[test]
fn coverage_matches_group_by() {
    for seed in 0..10 {
        let c = random_log_corpus(100 + seed);
        let mut per_tuple: HashMap<&str, usize> = c.tuples.iter().map(|t| (t.tuple_id.as_str(), 0)).collect();
        for a in &c.annotations {
            *per_tuple.get_mut(a.tuple_id.as_str()).unwrap() += 1;
        }
        let frac = |k: usize| per_tuple.values().filter(|&&n| n >= k).count() as f64 / c.tuples.len() as f64;
        let stats = coverage_stats(&c).unwrap();
        assert_eq!(stats.fraction_at_least_three, frac(3));
        assert_eq!(stats.fraction_at_least_two, frac(2));
        let apps: Vec<u32> = brute_force_counts(&c).values().map(|v| v.0).collect();
        assert_eq!(stats.judgments_per_item_min, *apps.iter().min().unwrap());
        assert_eq!(stats.judgments_per_item_max, *apps.iter().max().unwrap());
    }
}
