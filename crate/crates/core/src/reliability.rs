//! Split-half reliability and simulated annotators.
//!
//! Each iteration shuffles every tuple's annotations and cuts them into two
//! halves (an odd count gives the extra annotation to a side chosen by coin
//! flip), scores each half with the counting procedure and correlates the
//! two score vectors. Iteration `i` draws from ChaCha stream `i` of the run
//! seed, so iterations can run in parallel and still reproduce a sequential
//! run exactly.

use std::collections::HashMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{sequential_id, Annotation, Corpus, Tuple4};
use crate::scoring::{Judgement, ScoringError, ScoringIndex};
use crate::stats::{self, PairedSeries, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReliabilityError {
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("iteration {iteration}: {source}")]
    Correlation { iteration: usize, source: StatsError },
    #[error("no tuple has at least two annotations")]
    NothingToSplit,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrIteration {
    pub pearson: f64,
    pub spearman: f64,
    /// Items scored in both halves.
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrResult {
    pub pearson_mean: f64,
    pub pearson_std: f64,
    pub spearman_mean: f64,
    pub spearman_std: f64,
    pub iterations: usize,
    /// Tuples with fewer than two annotations, left out of every split.
    pub excluded_tuples: usize,
    /// Item observations dropped because a half did not cover the item,
    /// summed over iterations.
    pub dropped_items: usize,
    pub per_iteration: Vec<ShrIteration>,
}

/// Annotations grouped by tuple, ready for repeated splitting.
#[derive(Debug, Clone)]
pub struct SplitHalf {
    index: ScoringIndex,
    groups: Vec<Vec<Judgement>>,
    excluded_tuples: usize,
}

impl SplitHalf {
    pub fn new(corpus: &Corpus) -> Result<Self, ReliabilityError> {
        let index = ScoringIndex::for_corpus(corpus)?;
        let mut by_tuple: Vec<Vec<Judgement>> = vec![Vec::new(); index.n_tuples()];
        for j in index.resolve_all(&corpus.annotations)? {
            by_tuple[j.tuple].push(j);
        }
        let annotated = by_tuple.iter().filter(|g| !g.is_empty()).count();
        let groups: Vec<Vec<Judgement>> = by_tuple.into_iter().filter(|g| g.len() >= 2).collect();
        if groups.is_empty() {
            return Err(ReliabilityError::NothingToSplit);
        }
        let excluded_tuples = annotated - groups.len();
        Ok(SplitHalf { index, groups, excluded_tuples })
    }

    pub fn excluded_tuples(&self) -> usize {
        self.excluded_tuples
    }

    /// One random split, drawn from stream `iteration` of `rng_seed`.
    pub fn iteration(&self, rng_seed: u64, iteration: usize) -> Result<ShrIteration, ReliabilityError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(iteration as u64);
        let mut half_a = Vec::new();
        let mut half_b = Vec::new();
        let mut scratch = Vec::new();
        for group in &self.groups {
            scratch.clear();
            scratch.extend_from_slice(group);
            scratch.shuffle(&mut rng);
            let mut cut = scratch.len() / 2;
            if scratch.len() % 2 == 1 && rng.gen_bool(0.5) {
                cut += 1;
            }
            half_a.extend_from_slice(&scratch[..cut]);
            half_b.extend_from_slice(&scratch[cut..]);
        }
        let (a, b) = (self.index.count(&half_a), self.index.count(&half_b));
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for item in 0..self.index.n_items() {
            if let (Some(x), Some(y)) = (a.raw(item), b.raw(item)) {
                xs.push(x);
                ys.push(y);
            }
        }
        let n_items = xs.len();
        let corr = |e| ReliabilityError::Correlation { iteration, source: e };
        let series = PairedSeries::new(xs, ys).map_err(corr)?;
        Ok(ShrIteration { pearson: stats::pearson(&series).map_err(corr)?, spearman: stats::spearman(&series).map_err(corr)?, n_items })
    }

    pub fn run(&self, iterations: usize, rng_seed: u64) -> Result<ShrResult, ReliabilityError> {
        if iterations == 0 {
            return Err(ReliabilityError::InvalidConfig("iterations must be at least 1".into()));
        }
        let per_iteration = (0..iterations).into_par_iter().map(|i| self.iteration(rng_seed, i)).collect::<Result<Vec<_>, _>>()?;
        let covered = self.covered_items();
        let pearsons: Vec<f64> = per_iteration.iter().map(|r| r.pearson).collect();
        let spearmans: Vec<f64> = per_iteration.iter().map(|r| r.spearman).collect();
        let (pearson_mean, pearson_std) = stats::mean_std(&pearsons);
        let (spearman_mean, spearman_std) = stats::mean_std(&spearmans);
        Ok(ShrResult {
            pearson_mean,
            pearson_std,
            spearman_mean,
            spearman_std,
            iterations,
            excluded_tuples: self.excluded_tuples,
            dropped_items: per_iteration.iter().map(|r| covered - r.n_items).sum(),
            per_iteration,
        })
    }

    /// Items covered by at least one included tuple.
    fn covered_items(&self) -> usize {
        let all: Vec<Judgement> = self.groups.iter().flatten().copied().collect();
        self.index.count(&all).appearances.iter().filter(|&&n| n > 0).count()
    }
}

/// Split-half reliability of a corpus' annotations over `iterations` random
/// splits. Correlations use raw scores.
pub fn split_half_reliability(corpus: &Corpus, iterations: usize, rng_seed: u64) -> Result<ShrResult, ReliabilityError> {
    SplitHalf::new(corpus)?.run(iterations, rng_seed)
}

/// Synthetic annotator behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct SimAnnotatorConfig {
    pub latent_scores: HashMap<String, f64>,
    /// In [0.5, 1.0]. 1.0 always picks by the latent order; 0.5 picks
    /// uniformly at random. In between, a judgment follows the latent order
    /// with probability `2 * fidelity - 1` and is random otherwise.
    pub fidelity: f64,
    pub rng_seed: u64,
}

impl SimAnnotatorConfig {
    pub fn follow_probability(&self) -> f64 {
        2.0 * self.fidelity - 1.0
    }
}

fn sim_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Produces `annotations_per_tuple` judgments per tuple from synthetic
/// annotators `sim01`, `sim02`, ... Deterministic in `config.rng_seed`;
/// timestamps count seconds from a fixed epoch.
pub fn simulate_annotators(
    item_ids: &[String],
    tuples: &[Tuple4],
    annotations_per_tuple: usize,
    config: &SimAnnotatorConfig,
) -> Result<Vec<Annotation>, ReliabilityError> {
    if !(0.5..=1.0).contains(&config.fidelity) {
        return Err(ReliabilityError::InvalidConfig(format!("fidelity {} outside [0.5, 1.0]", config.fidelity)));
    }
    if annotations_per_tuple == 0 {
        return Err(ReliabilityError::InvalidConfig("annotations_per_tuple must be at least 1".into()));
    }
    let latent = |id: &str| {
        config.latent_scores.get(id).copied().ok_or_else(|| ReliabilityError::InvalidConfig(format!("no latent score for item `{id}`")))
    };
    for id in item_ids {
        latent(id)?;
    }

    let follow = config.follow_probability();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let annotator_width = annotations_per_tuple.to_string().len().max(2);
    let mut out = Vec::with_capacity(tuples.len() * annotations_per_tuple);
    for tuple in tuples {
        let scores = tuple.item_ids.iter().map(|id| latent(id)).collect::<Result<Vec<f64>, _>>()?;
        let arg = |better: fn(f64, f64) -> bool| (1..scores.len()).fold(0, |acc, i| if better(scores[i], scores[acc]) { i } else { acc });
        let (top, bottom) = (arg(|a, b| a > b), arg(|a, b| a < b));
        for k in 0..annotations_per_tuple {
            let mut display_order = tuple.item_ids.clone();
            display_order.shuffle(&mut rng);
            let (best, worst) = if follow >= 1.0 || rng.gen::<f64>() < follow {
                (top, bottom)
            } else {
                let best = rng.gen_range(0..tuple.item_ids.len());
                let mut worst = rng.gen_range(0..tuple.item_ids.len() - 1);
                if worst >= best {
                    worst += 1;
                }
                (best, worst)
            };
            let n = out.len() + 1;
            out.push(Annotation {
                annotation_id: sequential_id("a", n, 6),
                tuple_id: tuple.tuple_id.clone(),
                annotator_id: sequential_id("sim", k + 1, annotator_width),
                best_id: tuple.item_ids[best].clone(),
                worst_id: tuple.item_ids[worst].clone(),
                display_order,
                feedback: None,
                timestamp: sim_epoch() + Duration::seconds(n as i64),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Item, PromptType, SeedCategory};
    use crate::design::{design_tuples, DesignConfig};
    use crate::scoring::compute_scores;

    pub(crate) fn sim_corpus(n: usize, per_tuple: usize, fidelity: f64, seed: u64) -> Corpus {
        let ids: Vec<String> = (0..n).map(|i| format!("i{i:04}")).collect();
        let tuples = design_tuples(&ids, &DesignConfig::with_seed(seed)).unwrap();
        // latent order deliberately unrelated to id order
        let latent = ids.iter().enumerate().map(|(i, id)| (id.clone(), ((i * 37) % n) as f64)).collect();
        let cfg = SimAnnotatorConfig { latent_scores: latent, fidelity, rng_seed: seed + 1 };
        let annotations = simulate_annotators(&ids, &tuples, per_tuple, &cfg).unwrap();
        let items = ids
            .iter()
            .map(|id| Item {
                item_id: id.clone(),
                text: format!("statement {id}"),
                seed_id: None,
                seed_type: SeedCategory::Neutral,
                prompt_type: PromptType::Completion,
            })
            .collect();
        Corpus { seeds: vec![], items, tuples, annotations }
    }

    #[test]
    fn fidelity_one_always_picks_latent_extremes() {
        let c = sim_corpus(16, 2, 1.0, 4);
        c.validate().unwrap();
        let latent = |id: &str| ((id[1..].parse::<usize>().unwrap() * 37) % 16) as f64;
        let tuples = c.tuple_index();
        for a in &c.annotations {
            let t = tuples[a.tuple_id.as_str()];
            let max = t.item_ids.iter().map(|i| latent(i)).fold(f64::MIN, f64::max);
            let min = t.item_ids.iter().map(|i| latent(i)).fold(f64::MAX, f64::min);
            assert_eq!(latent(&a.best_id), max);
            assert_eq!(latent(&a.worst_id), min);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        assert_eq!(sim_corpus(40, 3, 0.8, 9), sim_corpus(40, 3, 0.8, 9));
        assert_ne!(sim_corpus(40, 3, 0.8, 9).annotations, sim_corpus(40, 3, 0.8, 10).annotations);
    }

    #[test]
    fn rejects_bad_fidelity_and_missing_latent() {
        let ids = vec!["a".to_string()];
        let cfg = SimAnnotatorConfig { latent_scores: HashMap::new(), fidelity: 0.4, rng_seed: 0 };
        assert!(simulate_annotators(&ids, &[], 1, &cfg).is_err());
        let cfg = SimAnnotatorConfig { fidelity: 0.9, ..cfg };
        assert!(simulate_annotators(&ids, &[], 1, &cfg).is_err());
    }

    #[test]
    fn fidelity_one_scores_match_exhaustive_count() {
        // with one deterministic judgment per tuple, an item's raw score is
        // (#tuples where it is the latent max - #tuples where it is the min) / 8
        let c = sim_corpus(16, 1, 1.0, 21);
        let scores = compute_scores(&c, false).unwrap();
        let latent = |id: &str| ((id[1..].parse::<usize>().unwrap() * 37) % 16) as f64;
        for s in &scores.records {
            let mut net = 0i64;
            for t in c.tuples.iter().filter(|t| t.contains(&s.item_id)) {
                let l: Vec<f64> = t.item_ids.iter().map(|i| latent(i)).collect();
                let me = latent(&s.item_id);
                if l.iter().all(|&v| v <= me) {
                    net += 1;
                }
                if l.iter().all(|&v| v >= me) {
                    net -= 1;
                }
            }
            assert_eq!(s.n_appearances, 8);
            assert_eq!(s.raw, net as f64 / 8.0, "{}", s.item_id);
        }
        // the global extremes are recovered exactly
        let ranked = scores.ranked();
        assert_eq!(latent(&ranked[0].item_id), 15.0);
        assert_eq!(latent(&ranked[15].item_id), 0.0);
    }

    #[test]
    fn single_annotation_tuples_are_excluded() {
        let mut c = sim_corpus(16, 2, 0.9, 2);
        // drop one annotation of the first tuple
        let first = c.tuples[0].tuple_id.clone();
        let pos = c.annotations.iter().position(|a| a.tuple_id == first).unwrap();
        c.annotations.remove(pos);
        let split = SplitHalf::new(&c).unwrap();
        assert_eq!(split.excluded_tuples(), 1);
    }

    #[test]
    fn parallel_run_matches_sequential_iterations() {
        let c = sim_corpus(40, 3, 0.8, 5);
        let split = SplitHalf::new(&c).unwrap();
        let run = split.run(12, 77).unwrap();
        let sequential: Vec<ShrIteration> = (0..12).map(|i| split.iteration(77, i).unwrap()).collect();
        assert_eq!(run.per_iteration, sequential);
        assert_eq!(split.run(12, 77).unwrap(), run);
    }

    #[test]
    fn raw_and_scaled_scores_correlate_identically() {
        let c = sim_corpus(40, 3, 0.8, 5);
        let split = SplitHalf::new(&c).unwrap();
        let it = split.iteration(3, 0).unwrap();
        // rebuild the same split's vectors on the scaled scale
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(0);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for g in &split.groups {
            let mut g = g.clone();
            g.shuffle(&mut rng);
            let mut cut = g.len() / 2;
            if g.len() % 2 == 1 && rng.gen_bool(0.5) {
                cut += 1;
            }
            a.extend_from_slice(&g[..cut]);
            b.extend_from_slice(&g[cut..]);
        }
        let (ca, cb) = (split.index.count(&a), split.index.count(&b));
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..split.index.n_items() {
            if let (Some(x), Some(y)) = (ca.raw(i), cb.raw(i)) {
                xs.push((x + 1.0) / 2.0);
                ys.push((y + 1.0) / 2.0);
            }
        }
        let s = PairedSeries::new(xs, ys).unwrap();
        assert!((stats::pearson(&s).unwrap() - it.pearson).abs() < 1e-12);
        assert!((stats::spearman(&s).unwrap() - it.spearman).abs() < 1e-12);
    }
}
