//! Synthetic corpora for demos, benchmarks and tests.

use std::collections::HashMap;

use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{sequential_id, Annotation, Corpus, Item, PromptType, SeedCategory, Tuple4};
use crate::design::{design_tuples, DesignConfig, DesignError};
use crate::reliability::{simulate_annotators, ReliabilityError, SimAnnotatorConfig};

/// `n` placeholder items `i00001..`, cycling through seed and prompt types.
pub fn placeholder_items(n: usize) -> Vec<Item> {
    (0..n)
        .map(|i| Item {
            item_id: sequential_id("i", i + 1, 5),
            text: format!("synthetic statement {}", i + 1),
            seed_id: None,
            seed_type: SeedCategory::ALL[i % SeedCategory::ALL.len()],
            prompt_type: if i % 2 == 0 { PromptType::Completion } else { PromptType::Conversion },
        })
        .collect()
}

/// A latent score per item: a random permutation of `0..n`, so the latent
/// order is strict and unrelated to id order.
pub fn random_latent(item_ids: &[String], rng_seed: u64) -> HashMap<String, f64> {
    let mut ranks: Vec<usize> = (0..item_ids.len()).collect();
    ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    item_ids.iter().cloned().zip(ranks.into_iter().map(|r| r as f64)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Simulation(#[from] ReliabilityError),
}

/// A designed and simulated corpus together with the latent scores that
/// drove the simulated annotators.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub corpus: Corpus,
    pub latent: HashMap<String, f64>,
}

/// Designs tuples over `n` placeholder items and annotates each tuple
/// `per_tuple` times at the given fidelity.
pub fn simulated_corpus(n: usize, per_tuple: usize, fidelity: f64, rng_seed: u64) -> Result<Simulated, SynthError> {
    let items = placeholder_items(n);
    let ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let tuples = design_tuples(&ids, &DesignConfig::with_seed(rng_seed))?;
    let latent = random_latent(&ids, rng_seed.wrapping_add(1));
    let config = SimAnnotatorConfig { latent_scores: latent.clone(), fidelity, rng_seed: rng_seed.wrapping_add(2) };
    let annotations = simulate_annotators(&ids, &tuples, per_tuple, &config)?;
    Ok(Simulated { corpus: Corpus { seeds: vec![], items, tuples, annotations }, latent })
}

/// Annotation log with a fixed number of annotations per tuple, picks
/// drawn uniformly. `per_tuple[t]` annotations go to tuple `t`; annotators
/// are assigned round-robin from a pool of `n_annotators`, which must be at
/// least the largest per-tuple count.
pub fn uniform_log(tuples: &[Tuple4], per_tuple: &[usize], n_annotators: usize, rng_seed: u64) -> Vec<Annotation> {
    assert_eq!(tuples.len(), per_tuple.len(), "one count per tuple");
    assert!(per_tuple.iter().all(|&k| k <= n_annotators), "not enough annotators");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let epoch = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut out = Vec::with_capacity(per_tuple.iter().sum());
    for (t, (tuple, &k)) in tuples.iter().zip(per_tuple).enumerate() {
        for j in 0..k {
            let mut order = tuple.item_ids.clone();
            order.shuffle(&mut rng);
            let n = out.len() + 1;
            out.push(Annotation {
                annotation_id: sequential_id("a", n, 6),
                tuple_id: tuple.tuple_id.clone(),
                annotator_id: sequential_id("ann", (t + j) % n_annotators + 1, 2),
                best_id: order[0].clone(),
                worst_id: order[1].clone(),
                display_order: order,
                feedback: None,
                timestamp: epoch + Duration::seconds(n as i64),
            });
        }
    }
    out
}

/// Per-tuple counts with `n_three` tuples annotated three times and the
/// rest twice, the threes placed at random.
pub fn mixed_coverage(n_tuples: usize, n_three: usize, rng_seed: u64) -> Vec<usize> {
    let mut counts: Vec<usize> = (0..n_tuples).map(|t| if t < n_three { 3 } else { 2 }).collect();
    counts.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    counts
}
