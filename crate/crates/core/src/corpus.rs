//! Record types shared by every stage of the pipeline, their on-disk formats
//! and the referential checks that tie them together.
//!
//! A corpus directory holds up to four line-delimited JSON files
//! (`seeds.jsonl`, `items.jsonl`, `tuples.jsonl`, `annotations.jsonl`), one
//! record per line. Missing files read as empty collections. Scores are
//! exported separately as `scores.csv`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEEDS_FILE: &str = "seeds.jsonl";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const TUPLES_FILE: &str = "tuples.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const SCORES_FILE: &str = "scores.csv";

/// Number of items shown together in one judgment.
pub const TUPLE_SIZE: usize = 4;

const SCORES_HEADER: [&str; 6] = ["item_id", "n_appearances", "n_best", "n_worst", "raw", "scaled"];

/// Grounding category of a seed (and of the items generated from it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedCategory {
    Explicit,
    Implicit,
    Neutral,
    Random,
}

impl SeedCategory {
    pub const ALL: [SeedCategory; 4] = [Self::Explicit, Self::Implicit, Self::Neutral, Self::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Explicit => "explicit",
            Self::Implicit => "implicit",
            Self::Neutral => "neutral",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for SeedCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Stereoset,
    Copa,
    Manual,
}

/// Prompting strategy an item was generated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptType {
    Completion,
    Conversion,
}

impl PromptType {
    pub const ALL: [PromptType; 2] = [Self::Completion, Self::Conversion];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completion => "completion",
            Self::Conversion => "conversion",
        }
    }
}

impl fmt::Display for PromptType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seed {
    pub seed_id: String,
    pub text: String,
    pub category: SeedCategory,
    pub source: SeedSource,
}

/// One statement under study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub item_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_id: Option<String>,
    pub seed_type: SeedCategory,
    pub prompt_type: PromptType,
}

/// A set of [`TUPLE_SIZE`] distinct items judged together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tuple4 {
    pub tuple_id: String,
    pub item_ids: Vec<String>,
}

impl Tuple4 {
    pub fn contains(&self, item_id: &str) -> bool {
        self.item_ids.iter().any(|id| id == item_id)
    }
}

/// One annotator's best/worst pick for one tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub annotation_id: String,
    pub tuple_id: String,
    pub annotator_id: String,
    pub best_id: String,
    pub worst_id: String,
    /// Order in which the tuple's items were shown.
    pub display_order: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    pub timestamp: DateTime<Utc>,
}

/// Counting score of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub item_id: String,
    pub n_appearances: u32,
    pub n_best: u32,
    pub n_worst: u32,
    /// `(n_best - n_worst) / n_appearances`, in [-1, 1].
    pub raw: f64,
    /// `(raw + 1) / 2`, in [0, 1].
    pub scaled: f64,
}

impl ScoreRecord {
    /// Builds a record from integer counts. Both scores are produced by a
    /// single correctly rounded division of exact integers, so they do not
    /// depend on summation order.
    ///
    /// Panics if `n_appearances` is zero or the pick counts exceed it.
    pub fn from_counts(item_id: impl Into<String>, n_appearances: u32, n_best: u32, n_worst: u32) -> Self {
        assert!(n_appearances > 0, "score of an item with no appearances");
        assert!(n_best + n_worst <= n_appearances, "more picks than appearances");
        let net = i64::from(n_best) - i64::from(n_worst);
        let n = i64::from(n_appearances);
        ScoreRecord {
            item_id: item_id.into(),
            n_appearances,
            n_best,
            n_worst,
            raw: net as f64 / n as f64,
            scaled: (net + n) as f64 / (2 * n) as f64,
        }
    }

    /// `n_best - n_worst`, i.e. `raw * n_appearances` without rounding.
    pub fn net(&self) -> i64 {
        i64::from(self.n_best) - i64::from(self.n_worst)
    }
}

/// File and 1-based line of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub file: &'static str,
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{at}: malformed record: {message}")]
    Malformed { at: Location, message: String },
    #[error("{at}: duplicate {kind} id `{id}`")]
    DuplicateId { at: Location, kind: &'static str, id: String },
    #[error("{at}: `{record}` references unknown {kind} `{target}`")]
    DanglingReference { at: Location, record: String, kind: &'static str, target: String },
    #[error("{at}: annotation `{annotation_id}` picks `{item_id}` as both best and worst")]
    BestEqualsWorst { at: Location, annotation_id: String, item_id: String },
    #[error("{at}: annotation `{annotation_id}` picks `{item_id}`, which is not in tuple `{tuple_id}`")]
    PickOutsideTuple { at: Location, annotation_id: String, item_id: String, tuple_id: String },
    #[error("{at}: annotator `{annotator_id}` judged tuple `{tuple_id}` more than once")]
    DuplicateJudgement { at: Location, tuple_id: String, annotator_id: String },
    #[error("{at}: `{record}`: {message}")]
    Invariant { at: Location, record: String, message: String },
    #[error("scores csv: {0}")]
    Csv(String),
}

impl CorpusError {
    /// Where the offending record sits, if the error concerns one.
    pub fn location(&self) -> Option<Location> {
        match self {
            Self::Malformed { at, .. }
            | Self::DuplicateId { at, .. }
            | Self::DanglingReference { at, .. }
            | Self::BestEqualsWorst { at, .. }
            | Self::PickOutsideTuple { at, .. }
            | Self::DuplicateJudgement { at, .. }
            | Self::Invariant { at, .. } => Some(*at),
            Self::Io { .. } | Self::Csv(_) => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Seeds, items, tuples and annotations of one study.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub seeds: Vec<Seed>,
    pub items: Vec<Item>,
    pub tuples: Vec<Tuple4>,
    pub annotations: Vec<Annotation>,
}

/// Source line of every record, parallel to the corpus vectors.
#[derive(Debug, Clone, Default)]
struct LineMap {
    seeds: Vec<usize>,
    items: Vec<usize>,
    tuples: Vec<usize>,
    annotations: Vec<usize>,
}

impl LineMap {
    fn sequential(corpus: &Corpus) -> Self {
        let seq = |n: usize| (1..=n).collect();
        LineMap {
            seeds: seq(corpus.seeds.len()),
            items: seq(corpus.items.len()),
            tuples: seq(corpus.tuples.len()),
            annotations: seq(corpus.annotations.len()),
        }
    }
}

impl Corpus {
    /// Reads and validates every corpus file in `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref();
        let (seeds, seed_lines) = read_jsonl_file(&dir.join(SEEDS_FILE), SEEDS_FILE)?;
        let (items, item_lines) = read_jsonl_file(&dir.join(ITEMS_FILE), ITEMS_FILE)?;
        let (tuples, tuple_lines) = read_jsonl_file(&dir.join(TUPLES_FILE), TUPLES_FILE)?;
        let (annotations, annotation_lines) = read_jsonl_file(&dir.join(ANNOTATIONS_FILE), ANNOTATIONS_FILE)?;
        let corpus = Corpus { seeds, items, tuples, annotations };
        let lines = LineMap { seeds: seed_lines, items: item_lines, tuples: tuple_lines, annotations: annotation_lines };
        corpus.validate_with(&lines)?;
        Ok(corpus)
    }

    /// Writes all four record files into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_jsonl_file(&dir.join(SEEDS_FILE), &self.seeds)?;
        write_jsonl_file(&dir.join(ITEMS_FILE), &self.items)?;
        write_jsonl_file(&dir.join(TUPLES_FILE), &self.tuples)?;
        write_jsonl_file(&dir.join(ANNOTATIONS_FILE), &self.annotations)?;
        Ok(())
    }

    /// Checks every record invariant and cross-reference. Line numbers in
    /// errors assume the canonical one-record-per-line layout.
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.validate_with(&LineMap::sequential(self))
    }

    fn validate_with(&self, lines: &LineMap) -> Result<(), CorpusError> {
        let mut seeds: HashMap<&str, &Seed> = HashMap::with_capacity(self.seeds.len());
        for (seed, &line) in self.seeds.iter().zip(&lines.seeds) {
            let at = Location { file: SEEDS_FILE, line };
            if seeds.insert(seed.seed_id.as_str(), seed).is_some() {
                return Err(CorpusError::DuplicateId { at, kind: "seed", id: seed.seed_id.clone() });
            }
            require_text(at, &seed.seed_id, &seed.text)?;
        }

        let mut items: HashSet<&str> = HashSet::with_capacity(self.items.len());
        for (item, &line) in self.items.iter().zip(&lines.items) {
            let at = Location { file: ITEMS_FILE, line };
            if !items.insert(item.item_id.as_str()) {
                return Err(CorpusError::DuplicateId { at, kind: "item", id: item.item_id.clone() });
            }
            require_text(at, &item.item_id, &item.text)?;
            if let Some(seed_id) = &item.seed_id {
                let seed = seeds.get(seed_id.as_str()).ok_or_else(|| CorpusError::DanglingReference {
                    at,
                    record: item.item_id.clone(),
                    kind: "seed",
                    target: seed_id.clone(),
                })?;
                if seed.category != item.seed_type {
                    return Err(CorpusError::Invariant {
                        at,
                        record: item.item_id.clone(),
                        message: format!("seed_type `{}` differs from seed category `{}`", item.seed_type, seed.category),
                    });
                }
            }
        }

        let mut tuples: HashMap<&str, &Tuple4> = HashMap::with_capacity(self.tuples.len());
        for (tuple, &line) in self.tuples.iter().zip(&lines.tuples) {
            let at = Location { file: TUPLES_FILE, line };
            if tuples.insert(tuple.tuple_id.as_str(), tuple).is_some() {
                return Err(CorpusError::DuplicateId { at, kind: "tuple", id: tuple.tuple_id.clone() });
            }
            if tuple.item_ids.len() != TUPLE_SIZE {
                return Err(CorpusError::Invariant {
                    at,
                    record: tuple.tuple_id.clone(),
                    message: format!("expected {TUPLE_SIZE} items, found {}", tuple.item_ids.len()),
                });
            }
            let mut seen = HashSet::with_capacity(TUPLE_SIZE);
            for item_id in &tuple.item_ids {
                if !items.contains(item_id.as_str()) {
                    return Err(CorpusError::DanglingReference {
                        at,
                        record: tuple.tuple_id.clone(),
                        kind: "item",
                        target: item_id.clone(),
                    });
                }
                if !seen.insert(item_id.as_str()) {
                    return Err(CorpusError::Invariant {
                        at,
                        record: tuple.tuple_id.clone(),
                        message: format!("item `{item_id}` listed twice"),
                    });
                }
            }
        }

        let mut annotation_ids: HashSet<&str> = HashSet::with_capacity(self.annotations.len());
        let mut judged: HashSet<(&str, &str)> = HashSet::with_capacity(self.annotations.len());
        for (annotation, &line) in self.annotations.iter().zip(&lines.annotations) {
            let at = Location { file: ANNOTATIONS_FILE, line };
            check_annotation(at, annotation, &tuples)?;
            if !annotation_ids.insert(annotation.annotation_id.as_str()) {
                return Err(CorpusError::DuplicateId { at, kind: "annotation", id: annotation.annotation_id.clone() });
            }
            if !judged.insert((annotation.tuple_id.as_str(), annotation.annotator_id.as_str())) {
                return Err(CorpusError::DuplicateJudgement {
                    at,
                    tuple_id: annotation.tuple_id.clone(),
                    annotator_id: annotation.annotator_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn item(&self, item_id: &str) -> Option<&Item> {
        self.items.iter().find(|item| item.item_id == item_id)
    }

    pub fn tuple_index(&self) -> HashMap<&str, &Tuple4> {
        self.tuples.iter().map(|t| (t.tuple_id.as_str(), t)).collect()
    }

    /// Distinct annotator ids, sorted.
    pub fn annotators(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.annotations.iter().map(|a| a.annotator_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

fn require_text(at: Location, record: &str, text: &str) -> Result<(), CorpusError> {
    if text.trim().is_empty() {
        return Err(CorpusError::Invariant { at, record: record.to_string(), message: "empty text".into() });
    }
    Ok(())
}

/// Checks the record-local annotation invariants against its tuple.
/// Uniqueness across the log is the caller's concern.
fn check_annotation(at: Location, annotation: &Annotation, tuples: &HashMap<&str, &Tuple4>) -> Result<(), CorpusError> {
    let tuple = tuples.get(annotation.tuple_id.as_str()).ok_or_else(|| CorpusError::DanglingReference {
        at,
        record: annotation.annotation_id.clone(),
        kind: "tuple",
        target: annotation.tuple_id.clone(),
    })?;
    if annotation.annotator_id.trim().is_empty() {
        return Err(CorpusError::Invariant { at, record: annotation.annotation_id.clone(), message: "empty annotator_id".into() });
    }
    if annotation.best_id == annotation.worst_id {
        return Err(CorpusError::BestEqualsWorst {
            at,
            annotation_id: annotation.annotation_id.clone(),
            item_id: annotation.best_id.clone(),
        });
    }
    for pick in [&annotation.best_id, &annotation.worst_id] {
        if !tuple.contains(pick) {
            return Err(CorpusError::PickOutsideTuple {
                at,
                annotation_id: annotation.annotation_id.clone(),
                item_id: pick.clone(),
                tuple_id: tuple.tuple_id.clone(),
            });
        }
    }
    if !is_permutation_of(&annotation.display_order, &tuple.item_ids) {
        return Err(CorpusError::Invariant {
            at,
            record: annotation.annotation_id.clone(),
            message: format!("display_order is not a permutation of tuple `{}`", tuple.tuple_id),
        });
    }
    Ok(())
}

fn is_permutation_of(order: &[String], items: &[String]) -> bool {
    if order.len() != items.len() {
        return false;
    }
    let mut a: Vec<&str> = order.iter().map(String::as_str).collect();
    let mut b: Vec<&str> = items.iter().map(String::as_str).collect();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// Validates a single annotation against a tuple list. Used by the live
/// service before anything is persisted.
pub fn check_annotation_against(annotation: &Annotation, tuples: &[Tuple4]) -> Result<(), CorpusError> {
    let index: HashMap<&str, &Tuple4> = tuples.iter().map(|t| (t.tuple_id.as_str(), t)).collect();
    check_annotation(Location { file: ANNOTATIONS_FILE, line: 0 }, annotation, &index)
}

/// Parses line-delimited JSON records. Blank lines are skipped; returned
/// line numbers are 1-based and refer to the input.
pub fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R, file: &'static str) -> Result<(Vec<T>, Vec<usize>), CorpusError> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let at = Location { file, line: idx + 1 };
        let line = line.map_err(|e| CorpusError::Malformed { at, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed { at, message: e.to_string() })?;
        records.push(record);
        lines.push(at.line);
    }
    Ok((records, lines))
}

fn read_jsonl_file<T: DeserializeOwned>(path: &Path, file: &'static str) -> Result<(Vec<T>, Vec<usize>), CorpusError> {
    match File::open(path) {
        Ok(f) => read_jsonl(f, file),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok((Vec::new(), Vec::new())),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Reads one record file on its own, without cross-reference checks.
pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let name = match path.file_name().and_then(|n| n.to_str()) {
        Some(SEEDS_FILE) => SEEDS_FILE,
        Some(ITEMS_FILE) => ITEMS_FILE,
        Some(TUPLES_FILE) => TUPLES_FILE,
        Some(ANNOTATIONS_FILE) => ANNOTATIONS_FILE,
        _ => "input",
    };
    read_jsonl(file, name).map(|(records, _)| records)
}

/// Serializes one record as a single JSON line (no trailing newline).
pub fn to_json_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("record types serialize infallibly")
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl(BufWriter::new(file), records).map_err(io_err(path))
}

/// Writes `scores.csv` with six-decimal fixed-point scores.
pub fn write_scores_csv<W: Write>(writer: W, scores: &[ScoreRecord]) -> Result<(), CorpusError> {
    let csv_err = |e: csv::Error| CorpusError::Csv(e.to_string());
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SCORES_HEADER).map_err(csv_err)?;
    for s in scores {
        out.write_record([
            s.item_id.clone(),
            s.n_appearances.to_string(),
            s.n_best.to_string(),
            s.n_worst.to_string(),
            format!("{:.6}", s.raw),
            format!("{:.6}", s.scaled),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| CorpusError::Csv(e.to_string()))
}

pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<ScoreRecord>, CorpusError> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers().map_err(|e| CorpusError::Csv(e.to_string()))?;
    if header.iter().ne(SCORES_HEADER) {
        return Err(CorpusError::Csv(format!("unexpected header, want `{}`", SCORES_HEADER.join(","))));
    }
    let mut scores = Vec::new();
    for (idx, row) in input.deserialize::<ScoreRecord>().enumerate() {
        let row = row.map_err(|e| CorpusError::Csv(format!("row {}: {e}", idx + 2)))?;
        scores.push(row);
    }
    Ok(scores)
}

pub fn read_scores_file(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, CorpusError> {
    let path = path.as_ref();
    read_scores_csv(File::open(path).map_err(io_err(path))?)
}

/// Zero-padded counter id with a type prefix, e.g. `t00042`.
pub fn sequential_id(prefix: &str, n: usize, width: usize) -> String {
    format!("{prefix}{n:0width$}")
}
