//! Counting scores.
//!
//! An item's raw score is the share of its covering annotations that picked
//! it as best minus the share that picked it as worst; the scaled score maps
//! that from [-1, 1] onto [0, 1]. Counts are integers, so the zero-sum
//! identity `sum(raw * n_appearances) == 0` holds exactly.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Annotation, Corpus, ScoreRecord, Tuple4};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("{} item(s) never appear in an annotated tuple, e.g. `{}`", .0.len(), .0[0])]
    Uncovered(Vec<String>),
    #[error("annotation `{annotation_id}` references unknown {kind} `{id}`")]
    UnknownReference { annotation_id: String, kind: &'static str, id: String },
    #[error("tuple `{tuple_id}` references unknown item `{item_id}`")]
    UnknownItem { tuple_id: String, item_id: String },
}

/// Dense, index-based view of items, tuples and judgments. Lets repeated
/// scoring passes (split-half reliability) work on plain integer arrays.
#[derive(Debug, Clone)]
pub struct ScoringIndex {
    item_ids: Vec<String>,
    tuple_items: Vec<Vec<usize>>,
    tuple_pos: HashMap<String, usize>,
    item_pos: HashMap<String, usize>,
}

/// One annotation with ids resolved to indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Judgement {
    pub tuple: usize,
    pub best: usize,
    pub worst: usize,
}

/// Per-item integer tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts {
    pub appearances: Vec<u32>,
    pub best: Vec<u32>,
    pub worst: Vec<u32>,
}

impl ScoringIndex {
    pub fn new(item_ids: impl IntoIterator<Item = String>, tuples: &[Tuple4]) -> Result<Self, ScoringError> {
        let item_ids: Vec<String> = item_ids.into_iter().collect();
        let item_pos: HashMap<String, usize> = item_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut tuple_items = Vec::with_capacity(tuples.len());
        let mut tuple_pos = HashMap::with_capacity(tuples.len());
        for (t, tuple) in tuples.iter().enumerate() {
            let members = tuple
                .item_ids
                .iter()
                .map(|id| {
                    item_pos
                        .get(id)
                        .copied()
                        .ok_or_else(|| ScoringError::UnknownItem { tuple_id: tuple.tuple_id.clone(), item_id: id.clone() })
                })
                .collect::<Result<Vec<_>, _>>()?;
            tuple_items.push(members);
            tuple_pos.insert(tuple.tuple_id.clone(), t);
        }
        Ok(ScoringIndex { item_ids, tuple_items, tuple_pos, item_pos })
    }

    pub fn for_corpus(corpus: &Corpus) -> Result<Self, ScoringError> {
        Self::new(corpus.items.iter().map(|i| i.item_id.clone()), &corpus.tuples)
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_tuples(&self) -> usize {
        self.tuple_items.len()
    }

    pub fn item_id(&self, idx: usize) -> &str {
        &self.item_ids[idx]
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_pos.get(id).copied()
    }

    pub fn tuple_members(&self, tuple: usize) -> &[usize] {
        &self.tuple_items[tuple]
    }

    pub fn resolve(&self, a: &Annotation) -> Result<Judgement, ScoringError> {
        let unknown = |kind, id: &str| ScoringError::UnknownReference { annotation_id: a.annotation_id.clone(), kind, id: id.to_string() };
        let tuple = *self.tuple_pos.get(&a.tuple_id).ok_or_else(|| unknown("tuple", &a.tuple_id))?;
        let best = self.item_index(&a.best_id).ok_or_else(|| unknown("item", &a.best_id))?;
        let worst = self.item_index(&a.worst_id).ok_or_else(|| unknown("item", &a.worst_id))?;
        Ok(Judgement { tuple, best, worst })
    }

    pub fn resolve_all(&self, annotations: &[Annotation]) -> Result<Vec<Judgement>, ScoringError> {
        annotations.iter().map(|a| self.resolve(a)).collect()
    }

    /// Tallies appearances and picks over the given judgments.
    pub fn count<'a>(&self, judgements: impl IntoIterator<Item = &'a Judgement>) -> Counts {
        let n = self.n_items();
        let mut counts = Counts { appearances: vec![0; n], best: vec![0; n], worst: vec![0; n] };
        for j in judgements {
            for &item in &self.tuple_items[j.tuple] {
                counts.appearances[item] += 1;
            }
            counts.best[j.best] += 1;
            counts.worst[j.worst] += 1;
        }
        counts
    }
}

impl Counts {
    /// Raw score of item `idx`, or `None` if it never appeared.
    pub fn raw(&self, idx: usize) -> Option<f64> {
        let n = self.appearances[idx];
        (n > 0).then(|| (i64::from(self.best[idx]) - i64::from(self.worst[idx])) as f64 / f64::from(n))
    }
}

/// Scores plus the items left out because nothing covered them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSet {
    pub records: Vec<ScoreRecord>,
    pub uncovered: Vec<String>,
}

impl ScoreSet {
    /// Records ordered by scaled score, highest first; ties by item id.
    pub fn ranked(&self) -> Vec<&ScoreRecord> {
        let mut out: Vec<&ScoreRecord> = self.records.iter().collect();
        out.sort_by(|a, b| b.scaled.total_cmp(&a.scaled).then_with(|| a.item_id.cmp(&b.item_id)));
        out
    }
}

/// Scores every corpus item, in corpus item order. Items no annotation
/// covers are an error unless `skip_uncovered` is set, in which case they
/// are listed in [`ScoreSet::uncovered`].
pub fn compute_scores(corpus: &Corpus, skip_uncovered: bool) -> Result<ScoreSet, ScoringError> {
    let index = ScoringIndex::for_corpus(corpus)?;
    let judgements = index.resolve_all(&corpus.annotations)?;
    let counts = index.count(&judgements);
    let mut records = Vec::with_capacity(index.n_items());
    let mut uncovered = Vec::new();
    for idx in 0..index.n_items() {
        if counts.appearances[idx] == 0 {
            uncovered.push(index.item_id(idx).to_string());
        } else {
            records.push(ScoreRecord::from_counts(index.item_id(idx), counts.appearances[idx], counts.best[idx], counts.worst[idx]));
        }
    }
    if !uncovered.is_empty() && !skip_uncovered {
        return Err(ScoringError::Uncovered(uncovered));
    }
    Ok(ScoreSet { records, uncovered })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageStats {
    pub n_tuples: usize,
    pub n_annotations: usize,
    /// Annotation count -> number of tuples with that many annotations.
    pub annotations_per_tuple: BTreeMap<usize, usize>,
    pub fraction_at_least_three: f64,
    pub fraction_at_least_two: f64,
    /// Fewest and most judgments any item received.
    pub judgments_per_item_min: u32,
    pub judgments_per_item_max: u32,
}

impl CoverageStats {
    pub fn fraction_at_least(&self, k: usize) -> f64 {
        if self.n_tuples == 0 {
            return 0.0;
        }
        let hit: usize = self.annotations_per_tuple.range(k..).map(|(_, n)| n).sum();
        hit as f64 / self.n_tuples as f64
    }
}

pub fn coverage_stats(corpus: &Corpus) -> Result<CoverageStats, ScoringError> {
    let index = ScoringIndex::for_corpus(corpus)?;
    let judgements = index.resolve_all(&corpus.annotations)?;
    let mut per_tuple = vec![0usize; index.n_tuples()];
    for j in &judgements {
        per_tuple[j.tuple] += 1;
    }
    let mut histogram = BTreeMap::new();
    for &n in &per_tuple {
        *histogram.entry(n).or_insert(0) += 1;
    }
    let counts = index.count(&judgements);
    let mut stats = CoverageStats {
        n_tuples: index.n_tuples(),
        n_annotations: judgements.len(),
        annotations_per_tuple: histogram,
        fraction_at_least_three: 0.0,
        fraction_at_least_two: 0.0,
        judgments_per_item_min: counts.appearances.iter().copied().min().unwrap_or(0),
        judgments_per_item_max: counts.appearances.iter().copied().max().unwrap_or(0),
    };
    stats.fraction_at_least_three = stats.fraction_at_least(3);
    stats.fraction_at_least_two = stats.fraction_at_least(2);
    Ok(stats)
}
