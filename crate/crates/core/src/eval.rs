//! Evaluation of external model predictions against gold scaled scores.
//!
//! Prediction files carry `item_id,score[,repeat_index]` rows (CSV) or
//! `{"item_id", "score", "repeat_index"?}` objects (JSONL). When several
//! repeats are present, each is scored on its own and the metrics are
//! averaged.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ScoreRecord;
use crate::stats::{self, PairedSeries, StatsError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: item `{item_id}` predicted twice in repeat {repeat}")]
    DuplicatePrediction { row: usize, item_id: String, repeat: usize },
    #[error("repeat indices must run 0..n without gaps; missing {0}")]
    RepeatGap(usize),
    #[error("no predictions")]
    Empty,
    #[error("repeat {repeat}: only {overlap} item(s) overlap the gold scores, need 2")]
    InsufficientOverlap { repeat: usize, overlap: usize },
    #[error("gold score for `{0}` is outside [0, 1]")]
    GoldOutOfRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    pub model_name: String,
    pub dimension: String,
    /// One map per repeat (at least one).
    pub repeats: Vec<BTreeMap<String, f64>>,
    /// Ids in the file that the gold set does not know; not scored.
    pub unknown_ids: Vec<String>,
}

#[derive(Deserialize)]
struct PredictionRow {
    item_id: String,
    score: f64,
    #[serde(default)]
    repeat_index: Option<usize>,
}

/// Reads predictions. Ids outside `known_ids` (when given) are set aside in
/// [`PredictionSet::unknown_ids`] instead of failing the read.
pub fn ingest_predictions<R: Read>(
    reader: R,
    format: PredictionFormat,
    model_name: &str,
    dimension: &str,
    known_ids: Option<&HashSet<String>>,
) -> Result<PredictionSet, EvalError> {
    let rows: Vec<(usize, PredictionRow)> = match format {
        PredictionFormat::Csv => {
            let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
            input
                .deserialize::<PredictionRow>()
                .enumerate()
                .map(|(i, r)| r.map(|row| (i + 2, row)).map_err(|e| EvalError::Malformed { row: i + 2, message: e.to_string() }))
                .collect::<Result<_, _>>()?
        }
        PredictionFormat::Jsonl => {
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let row = i + 1;
                let line = line.map_err(|e| EvalError::Malformed { row, message: e.to_string() })?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str(&line).map_err(|e| EvalError::Malformed { row, message: e.to_string() })?;
                rows.push((row, parsed));
            }
            rows
        }
    };
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }

    let mut repeats: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    let mut unknown = Vec::new();
    for (row, p) in rows {
        if !p.score.is_finite() {
            return Err(EvalError::Malformed { row, message: format!("non-finite score for `{}`", p.item_id) });
        }
        let repeat = p.repeat_index.unwrap_or(0);
        let slot = repeats.entry(repeat).or_default();
        if slot.insert(p.item_id.clone(), p.score).is_some() {
            return Err(EvalError::DuplicatePrediction { row, item_id: p.item_id, repeat });
        }
        if known_ids.is_some_and(|k| !k.contains(&p.item_id)) && !unknown.contains(&p.item_id) {
            unknown.push(p.item_id);
        }
    }
    if let Some(gap) = (0..repeats.len()).find(|r| !repeats.contains_key(r)) {
        return Err(EvalError::RepeatGap(gap));
    }
    let mut repeats: Vec<BTreeMap<String, f64>> = repeats.into_values().collect();
    for map in &mut repeats {
        map.retain(|id, _| !unknown.contains(id));
    }
    unknown.sort();
    Ok(PredictionSet { model_name: model_name.into(), dimension: dimension.into(), repeats, unknown_ids: unknown })
}

pub fn ingest_predictions_file(
    path: impl AsRef<Path>,
    format: PredictionFormat,
    model_name: &str,
    dimension: &str,
    known_ids: Option<&HashSet<String>>,
) -> Result<PredictionSet, EvalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    ingest_predictions(file, format, model_name, dimension, known_ids)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatMetrics {
    /// `None` when a series is constant and the correlation is undefined.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub mse: f64,
    pub n_items: usize,
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model_name: String,
    pub dimension: String,
    /// Metrics averaged over repeats; a correlation undefined in any repeat
    /// is undefined here.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub mse: f64,
    pub n_items: usize,
    /// Gold items without a prediction (largest over repeats).
    pub n_missing: usize,
    pub n_unknown: usize,
    pub per_repeat: Vec<RepeatMetrics>,
    pub notes: Vec<String>,
}

fn undefined_as_none(r: Result<f64, StatsError>) -> Option<f64> {
    r.ok()
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let all: Option<Vec<f64>> = values.collect();
    all.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Pearson, Spearman and MSE of predictions against gold scaled scores on
/// the items both sides share.
pub fn evaluate(gold: &[ScoreRecord], preds: &PredictionSet) -> Result<EvalReport, EvalError> {
    if let Some(bad) = gold.iter().find(|g| !(0.0..=1.0).contains(&g.scaled)) {
        return Err(EvalError::GoldOutOfRange(bad.item_id.clone()));
    }
    let gold_by_id: HashMap<&str, f64> = gold.iter().map(|g| (g.item_id.as_str(), g.scaled)).collect();
    let mut per_repeat = Vec::with_capacity(preds.repeats.len());
    for (repeat, predicted) in preds.repeats.iter().enumerate() {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for g in gold {
            if let Some(&p) = predicted.get(&g.item_id) {
                xs.push(p);
                ys.push(gold_by_id[g.item_id.as_str()]);
            }
        }
        let overlap = xs.len();
        let series = PairedSeries::new(xs, ys).map_err(|_| EvalError::InsufficientOverlap { repeat, overlap })?;
        per_repeat.push(RepeatMetrics {
            pearson: undefined_as_none(stats::pearson(&series)),
            spearman: undefined_as_none(stats::spearman(&series)),
            mse: stats::mse(&series),
            n_items: overlap,
            n_missing: gold.len() - overlap,
        });
    }

    let mut notes = Vec::new();
    let n_missing = per_repeat.iter().map(|m| m.n_missing).max().unwrap_or(0);
    if n_missing > 0 {
        notes.push(format!("{n_missing} gold item(s) lack predictions and were excluded pairwise"));
    }
    if !preds.unknown_ids.is_empty() {
        notes.push(format!("{} prediction(s) for unknown items ignored", preds.unknown_ids.len()));
    }
    if per_repeat.iter().any(|m| m.pearson.is_none()) {
        notes.push("constant prediction vector: correlation undefined".into());
    }
    let out_of_range = preds.repeats.iter().flat_map(|r| r.values()).any(|p| !(0.0..=1.0).contains(p));
    if out_of_range {
        notes.push("predictions fall outside [0, 1]; MSE is not on the gold scale".into());
    }
    let r = per_repeat.len() as f64;
    Ok(EvalReport {
        model_name: preds.model_name.clone(),
        dimension: preds.dimension.clone(),
        pearson: mean_defined(per_repeat.iter().map(|m| m.pearson)),
        spearman: mean_defined(per_repeat.iter().map(|m| m.spearman)),
        mse: per_repeat.iter().map(|m| m.mse).sum::<f64>() / r,
        n_items: per_repeat.iter().map(|m| m.n_items).min().unwrap_or(0),
        n_missing,
        n_unknown: preds.unknown_ids.len(),
        per_repeat,
        notes,
    })
}
