//! Assignment state and the append-only annotation log.
//!
//! All mutation goes through one mutex, so reserve and submit are
//! linearizable. A submit is acknowledged only after its log line has been
//! written and synced.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use bws_core::corpus::{self, sequential_id, ANNOTATIONS_FILE};
use bws_core::{Annotation, Corpus, CorpusError, Tuple4};
use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::AssignmentPolicy;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now(&self) -> DateTime<Utc> {
        (**self).now()
    }
}

/// Hand-driven clock for tests.
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: chrono::Duration) {
        *self.0.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown tuple `{0}`")]
    UnknownTuple(String),
    #[error("annotator `{annotator_id}` holds no reservation for tuple `{tuple_id}`")]
    NoReservation { tuple_id: String, annotator_id: String },
    #[error("reservation for tuple `{tuple_id}` expired at {expired_at}")]
    Expired { tuple_id: String, expired_at: DateTime<Utc> },
    #[error("annotator `{annotator_id}` already judged tuple `{tuple_id}`")]
    Duplicate { tuple_id: String, annotator_id: String },
    #[error("invalid annotation: {0}")]
    Invalid(String),
    #[error("annotator `{annotator_id}` reached the cap of {cap} tuples")]
    CapExceeded { annotator_id: String, cap: usize },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("annotation log {}: {source}", path.display())]
    Log { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reservation {
    pub tuple_id: String,
    pub annotator_id: String,
    pub expires_at: DateTime<Utc>,
    #[serde(skip)]
    display_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShownItem {
    pub item_id: String,
    pub text: String,
}

/// A reserved tuple with its items in display order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub tuple_id: String,
    pub items: Vec<ShownItem>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReserveOutcome {
    Assigned(Assignment),
    NoneRemaining,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub tuple_id: String,
    pub annotator_id: String,
    pub best_id: String,
    pub worst_id: String,
    #[serde(default)]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub completed: usize,
    pub reserved: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub n_tuples: usize,
    pub n_annotations: usize,
    pub target: usize,
    pub floor: usize,
    pub fraction_at_target: f64,
    pub fraction_at_floor: f64,
    pub live_reservations: usize,
    pub per_tuple: BTreeMap<String, usize>,
    pub per_annotator: BTreeMap<String, AnnotatorProgress>,
}

struct State {
    tuples: Vec<Tuple4>,
    tuple_index: HashMap<String, usize>,
    texts: HashMap<String, String>,
    committed: Vec<Annotation>,
    per_tuple: Vec<usize>,
    judged: HashSet<(usize, String)>,
    per_annotator: HashMap<String, usize>,
    /// At most one reservation per tuple; expired ones stay until replaced
    /// so a late submit can be told apart from a missing one.
    reservations: HashMap<usize, Reservation>,
    log: File,
    log_path: PathBuf,
    rng: ChaCha8Rng,
}

pub struct Store {
    policy: AssignmentPolicy,
    cap: usize,
    clock: Box<dyn Clock>,
    state: Mutex<State>,
}

impl Store {
    /// Opens the corpus in `data_dir` and replays its annotation log.
    /// `rng_seed` drives tie-breaks and display orders.
    pub fn open(data_dir: impl AsRef<Path>, policy: AssignmentPolicy, rng_seed: u64, clock: Box<dyn Clock>) -> Result<Self, StoreError> {
        policy.validate().map_err(StoreError::Policy)?;
        let dir = data_dir.as_ref();
        let corpus = Corpus::load(dir)?;
        let log_path = dir.join(ANNOTATIONS_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|source| StoreError::Log { path: log_path.clone(), source })?;
        let tuple_index: HashMap<String, usize> = corpus.tuples.iter().enumerate().map(|(i, t)| (t.tuple_id.clone(), i)).collect();
        let mut state = State {
            per_tuple: vec![0; corpus.tuples.len()],
            tuple_index,
            texts: corpus.items.iter().map(|i| (i.item_id.clone(), i.text.clone())).collect(),
            committed: Vec::with_capacity(corpus.annotations.len()),
            judged: HashSet::new(),
            per_annotator: HashMap::new(),
            reservations: HashMap::new(),
            tuples: corpus.tuples,
            log,
            log_path,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        };
        for a in corpus.annotations {
            state.record(a);
        }
        Ok(Store { cap: policy.annotator_cap(state.tuples.len()), policy, clock, state: Mutex::new(state) })
    }

    pub fn policy(&self) -> &AssignmentPolicy {
        &self.policy
    }

    pub fn annotator_cap(&self) -> usize {
        self.cap
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    /// Hands out the least-annotated tuple the annotator may still judge.
    /// An annotator who already holds a live reservation gets it back.
    pub fn reserve(&self, annotator_id: &str) -> Result<ReserveOutcome, StoreError> {
        if annotator_id.trim().is_empty() {
            return Err(StoreError::Invalid("empty annotator id".into()));
        }
        let now = self.clock.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        let live = |r: &Reservation| r.expires_at > now;

        if let Some((&t, r)) = state.reservations.iter().find(|(_, r)| r.annotator_id == annotator_id && live(r)) {
            return Ok(ReserveOutcome::Assigned(state.assignment(t, r)));
        }
        let completed = state.per_annotator.get(annotator_id).copied().unwrap_or(0);
        if completed >= self.cap {
            return Err(StoreError::CapExceeded { annotator_id: annotator_id.into(), cap: self.cap });
        }

        let target = self.policy.target_annotations_per_tuple;
        let mut best: Vec<usize> = Vec::new();
        let mut best_count = usize::MAX;
        for t in 0..state.tuples.len() {
            let count = state.per_tuple[t];
            if count >= target || count > best_count {
                continue;
            }
            if state.reservations.get(&t).is_some_and(live) || state.judged.contains(&(t, annotator_id.to_string())) {
                continue;
            }
            if count < best_count {
                best_count = count;
                best.clear();
            }
            best.push(t);
        }
        let Some(&t) = best.choose(&mut state.rng) else {
            return Ok(ReserveOutcome::NoneRemaining);
        };
        let mut display_order = state.tuples[t].item_ids.clone();
        display_order.shuffle(&mut state.rng);
        let reservation = Reservation {
            tuple_id: state.tuples[t].tuple_id.clone(),
            annotator_id: annotator_id.to_string(),
            expires_at: now + self.policy.reservation_ttl,
            display_order,
        };
        let assignment = state.assignment(t, &reservation);
        state.reservations.insert(t, reservation);
        Ok(ReserveOutcome::Assigned(assignment))
    }

    /// Validates and durably records a judgment for a reserved tuple.
    pub fn submit(&self, s: Submission) -> Result<Annotation, StoreError> {
        let now = self.clock.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        let &t = state.tuple_index.get(&s.tuple_id).ok_or_else(|| StoreError::UnknownTuple(s.tuple_id.clone()))?;
        if state.judged.contains(&(t, s.annotator_id.clone())) {
            return Err(StoreError::Duplicate { tuple_id: s.tuple_id, annotator_id: s.annotator_id });
        }
        let reservation = match state.reservations.get(&t) {
            Some(r) if r.annotator_id == s.annotator_id => r,
            _ => return Err(StoreError::NoReservation { tuple_id: s.tuple_id, annotator_id: s.annotator_id }),
        };
        if reservation.expires_at <= now {
            let expired_at = reservation.expires_at;
            state.reservations.remove(&t);
            return Err(StoreError::Expired { tuple_id: s.tuple_id, expired_at });
        }
        let annotation = Annotation {
            annotation_id: sequential_id("a", state.committed.len() + 1, 6),
            tuple_id: s.tuple_id,
            annotator_id: s.annotator_id,
            best_id: s.best_id,
            worst_id: s.worst_id,
            display_order: reservation.display_order.clone(),
            feedback: s.feedback.filter(|f| !f.trim().is_empty()),
            timestamp: now,
        };
        corpus::check_annotation_against(&annotation, std::slice::from_ref(&state.tuples[t]))
            .map_err(|e| StoreError::Invalid(invalid_message(&e)))?;

        let mut line = corpus::to_json_line(&annotation);
        line.push('\n');
        let log_err = |source| StoreError::Log { path: state.log_path.clone(), source };
        state.log.write_all(line.as_bytes()).map_err(log_err)?;
        state.log.sync_data().map_err(|source| StoreError::Log { path: state.log_path.clone(), source })?;
        state.reservations.remove(&t);
        state.record(annotation.clone());
        Ok(annotation)
    }

    pub fn progress(&self) -> Progress {
        let now = self.clock.now();
        let state = self.lock();
        let n = state.tuples.len();
        let frac = |k: usize| if n == 0 { 0.0 } else { state.per_tuple.iter().filter(|&&c| c >= k).count() as f64 / n as f64 };
        let mut per_annotator: BTreeMap<String, AnnotatorProgress> = state
            .per_annotator
            .iter()
            .map(|(a, &completed)| (a.clone(), AnnotatorProgress { completed, reserved: 0, cap: self.cap }))
            .collect();
        let mut live_reservations = 0;
        for r in state.reservations.values().filter(|r| r.expires_at > now) {
            live_reservations += 1;
            per_annotator
                .entry(r.annotator_id.clone())
                .or_insert(AnnotatorProgress { completed: 0, reserved: 0, cap: self.cap })
                .reserved += 1;
        }
        Progress {
            n_tuples: n,
            n_annotations: state.committed.len(),
            target: self.policy.target_annotations_per_tuple,
            floor: self.policy.floor_annotations_per_tuple,
            fraction_at_target: frac(self.policy.target_annotations_per_tuple),
            fraction_at_floor: frac(self.policy.floor_annotations_per_tuple),
            live_reservations,
            per_tuple: state.tuples.iter().zip(&state.per_tuple).map(|(t, &c)| (t.tuple_id.clone(), c)).collect(),
            per_annotator,
        }
    }

    /// Committed annotations in commit order, one JSON line each.
    pub fn export(&self) -> String {
        let state = self.lock();
        let mut out = String::new();
        for a in &state.committed {
            out.push_str(&corpus::to_json_line(a));
            out.push('\n');
        }
        out
    }
}

fn invalid_message(e: &CorpusError) -> String {
    match e {
        CorpusError::BestEqualsWorst { item_id, .. } => format!("`{item_id}` picked as both best and worst"),
        CorpusError::PickOutsideTuple { item_id, tuple_id, .. } => format!("`{item_id}` is not in tuple `{tuple_id}`"),
        other => other.to_string(),
    }
}

impl State {
    fn record(&mut self, a: Annotation) {
        let t = self.tuple_index[&a.tuple_id];
        self.per_tuple[t] += 1;
        *self.per_annotator.entry(a.annotator_id.clone()).or_insert(0) += 1;
        self.judged.insert((t, a.annotator_id.clone()));
        self.committed.push(a);
    }

    fn assignment(&self, t: usize, r: &Reservation) -> Assignment {
        Assignment {
            tuple_id: self.tuples[t].tuple_id.clone(),
            items: r.display_order.iter().map(|id| ShownItem { item_id: id.clone(), text: self.texts[id].clone() }).collect(),
            expires_at: r.expires_at,
        }
    }
}
