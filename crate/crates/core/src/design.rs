//! Balanced tuple design.
//!
//! With N items, `appearances_per_item` random permutations of the item list
//! are each cut into N / `tuple_size` consecutive tuples, so every item lands
//! in exactly `appearances_per_item` tuples (2N tuples at the defaults). Two
//! tuples share more than `max_pair_overlap` items exactly when they share a
//! (`max_pair_overlap` + 1)-subset, so the overlap cap is enforced through an
//! index of those sorted subsets. A permutation whose tuples collide with the
//! index is repaired by swapping items between its own tuples; if repair
//! stalls the permutation is reshuffled, up to `max_attempts` times.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{sequential_id, Tuple4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignConfig {
    pub tuple_size: usize,
    pub appearances_per_item: usize,
    pub max_pair_overlap: usize,
    pub rng_seed: u64,
    pub max_attempts: usize,
}

impl DesignConfig {
    pub fn with_seed(rng_seed: u64) -> Self {
        DesignConfig { tuple_size: 4, appearances_per_item: 8, max_pair_overlap: 2, rng_seed, max_attempts: 100 }
    }

    fn check(&self) -> Result<(), DesignError> {
        if self.tuple_size < 2 {
            return Err(DesignError::InvalidConfig("tuple_size must be at least 2".into()));
        }
        if self.appearances_per_item < 1 {
            return Err(DesignError::InvalidConfig("appearances_per_item must be at least 1".into()));
        }
        if self.max_pair_overlap >= self.tuple_size {
            return Err(DesignError::InvalidConfig("max_pair_overlap must be below tuple_size".into()));
        }
        if self.max_attempts < 1 {
            return Err(DesignError::InvalidConfig("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DesignError {
    #[error("invalid design config: {0}")]
    InvalidConfig(String),
    #[error("{n_items} items cannot be split into tuples of {tuple_size}")]
    NotDivisible { n_items: usize, tuple_size: usize },
    #[error("need at least {min} items, got {n_items}")]
    TooFewItems { n_items: usize, min: usize },
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error("permutation {permutation} still violates the overlap cap after {attempts} attempts")]
    Infeasible { permutation: usize, attempts: usize },
}

/// Generates the tuple design for `item_ids`. Deterministic in `config.rng_seed`.
pub fn design_tuples(item_ids: &[String], config: &DesignConfig) -> Result<Vec<Tuple4>, DesignError> {
    config.check()?;
    let n = item_ids.len();
    let k = config.tuple_size;
    if !n.is_multiple_of(k) {
        return Err(DesignError::NotDivisible { n_items: n, tuple_size: k });
    }
    if n < k {
        return Err(DesignError::TooFewItems { n_items: n, min: k });
    }
    let mut seen = HashSet::with_capacity(n);
    for id in item_ids {
        if !seen.insert(id.as_str()) {
            return Err(DesignError::DuplicateItem(id.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let subset_len = config.max_pair_overlap + 1;
    let mut used: HashSet<Vec<u32>> = HashSet::new();
    let mut blocks: Vec<Vec<u32>> = Vec::with_capacity(config.appearances_per_item * n / k);

    for permutation in 0..config.appearances_per_item {
        let mut placed = false;
        for _ in 0..config.max_attempts {
            let mut perm: Vec<u32> = (0..n as u32).collect();
            perm.shuffle(&mut rng);
            if repair_permutation(&mut perm, k, subset_len, &used, &mut rng) {
                for chunk in perm.chunks(k) {
                    let mut block = chunk.to_vec();
                    block.sort_unstable();
                    for sub in subsets(&block, subset_len) {
                        used.insert(sub);
                    }
                    blocks.push(chunk.to_vec());
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DesignError::Infeasible { permutation, attempts: config.max_attempts });
        }
    }

    let width = blocks.len().to_string().len().max(5);
    Ok(blocks
        .into_iter()
        .enumerate()
        .map(|(i, block)| Tuple4 {
            tuple_id: sequential_id("t", i + 1, width),
            item_ids: block.into_iter().map(|idx| item_ids[idx as usize].clone()).collect(),
        })
        .collect())
}

/// Number of `subset_len`-subsets of the chunk already present in `used`.
fn conflicts(chunk: &[u32], subset_len: usize, used: &HashSet<Vec<u32>>) -> usize {
    let mut block = chunk.to_vec();
    block.sort_unstable();
    subsets(&block, subset_len).filter(|s| used.contains(s)).count()
}

/// Min-conflicts repair: swap items between a conflicting chunk and a random
/// other chunk, keeping swaps that do not increase the conflict count.
/// Chunks of one permutation are disjoint, so they cannot collide with
/// each other; only collisions with earlier permutations matter.
fn repair_permutation(perm: &mut [u32], k: usize, subset_len: usize, used: &HashSet<Vec<u32>>, rng: &mut ChaCha8Rng) -> bool {
    let n_chunks = perm.len() / k;
    let mut cost: Vec<usize> = perm.chunks(k).map(|c| conflicts(c, subset_len, used)).collect();
    let mut total: usize = cost.iter().sum();
    let budget = 50 * perm.len();
    let mut steps = 0;
    while total > 0 {
        if steps >= budget || n_chunks < 2 {
            return false;
        }
        steps += 1;
        let bad: Vec<usize> = (0..n_chunks).filter(|&c| cost[c] > 0).collect();
        let a = bad[rng.gen_range(0..bad.len())];
        let mut b = rng.gen_range(0..n_chunks - 1);
        if b >= a {
            b += 1;
        }
        let pa = a * k + rng.gen_range(0..k);
        let pb = b * k + rng.gen_range(0..k);
        perm.swap(pa, pb);
        let ca = conflicts(&perm[a * k..(a + 1) * k], subset_len, used);
        let cb = conflicts(&perm[b * k..(b + 1) * k], subset_len, used);
        if ca + cb <= cost[a] + cost[b] {
            total = total - cost[a] - cost[b] + ca + cb;
            cost[a] = ca;
            cost[b] = cb;
        } else {
            perm.swap(pa, pb);
        }
    }
    true
}

/// All `r`-subsets of a sorted slice, in lexicographic order.
fn subsets(sorted: &[u32], r: usize) -> impl Iterator<Item = Vec<u32>> + '_ {
    let n = sorted.len();
    let mut idx: Vec<usize> = (0..r).collect();
    let mut done = r > n;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = idx.iter().map(|&i| sorted[i]).collect();
        // advance to the next combination
        let mut i = r;
        loop {
            if i == 0 {
                done = true;
                break;
            }
            i -= 1;
            if idx[i] != i + n - r {
                idx[i] += 1;
                for j in i + 1..r {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TupleCount { expected: usize, found: usize },
    TupleSize { tuple_id: String, size: usize },
    RepeatedItem { tuple_id: String, item_id: String },
    UnknownItem { tuple_id: String, item_id: String },
    Appearances { item_id: String, expected: usize, found: usize },
    Overlap { tuple_a: String, tuple_b: String, shared: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DesignReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

/// Checks a design against every postcondition of [`design_tuples`].
/// Violations are listed in a deterministic order.
pub fn verify_design(tuples: &[Tuple4], item_ids: &[String], config: &DesignConfig) -> DesignReport {
    let mut violations = Vec::new();
    let expected_tuples = (config.appearances_per_item * item_ids.len()).checked_div(config.tuple_size).unwrap_or(0);
    if tuples.len() != expected_tuples {
        violations.push(Violation::TupleCount { expected: expected_tuples, found: tuples.len() });
    }

    let known: HashSet<&str> = item_ids.iter().map(String::as_str).collect();
    let mut appearances: HashMap<&str, usize> = item_ids.iter().map(|id| (id.as_str(), 0)).collect();
    // item -> tuples containing it, for the overlap count
    let mut containing: HashMap<&str, Vec<usize>> = HashMap::new();
    for (t, tuple) in tuples.iter().enumerate() {
        if tuple.item_ids.len() != config.tuple_size {
            violations.push(Violation::TupleSize { tuple_id: tuple.tuple_id.clone(), size: tuple.item_ids.len() });
        }
        let mut seen = HashSet::new();
        for id in &tuple.item_ids {
            if !seen.insert(id.as_str()) {
                violations.push(Violation::RepeatedItem { tuple_id: tuple.tuple_id.clone(), item_id: id.clone() });
                continue;
            }
            if !known.contains(id.as_str()) {
                violations.push(Violation::UnknownItem { tuple_id: tuple.tuple_id.clone(), item_id: id.clone() });
            }
            *appearances.entry(id.as_str()).or_insert(0) += 1;
            containing.entry(id.as_str()).or_default().push(t);
        }
    }

    let mut counted: Vec<(&str, usize)> = appearances.into_iter().collect();
    counted.sort_unstable();
    for (id, found) in counted {
        if found != config.appearances_per_item && known.contains(id) {
            violations.push(Violation::Appearances { item_id: id.to_string(), expected: config.appearances_per_item, found });
        }
    }

    let mut shared: HashMap<(usize, usize), usize> = HashMap::new();
    for list in containing.values() {
        for (i, &a) in list.iter().enumerate() {
            for &b in &list[i + 1..] {
                *shared.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
    }
    let mut over: Vec<((usize, usize), usize)> = shared.into_iter().filter(|&(_, s)| s > config.max_pair_overlap).collect();
    over.sort_unstable();
    for ((a, b), s) in over {
        violations.push(Violation::Overlap { tuple_a: tuples[a].tuple_id.clone(), tuple_b: tuples[b].tuple_id.clone(), shared: s });
    }

    DesignReport { passed: violations.is_empty(), violations }
}
