//! Best-worst scaling (BWS) toolkit.
//!
//! The crate covers the offline half of a comparative annotation study:
//!
//! * [`corpus`]: record types, line-delimited JSON files and referential checks.
//! * [`design`]: balanced 4-tuple generation with a cap on shared items.
//! * [`scoring`]: counting scores (share of "best" picks minus share of "worst" picks).
//! * [`stats`]: Pearson, Spearman, MSE and fixed-width histograms.
//! * [`reliability`]: split-half reliability and simulated annotators.
//! * [`analytics`]: score bins, facet cross-tabs, PMI keywords and log-odds phrases.
//! * [`eval`]: comparing external model predictions against gold scores.
//! * [`prompts`]: seed catalog, prompt templates and a pluggable text generator.
//! * [`synth`]: synthetic corpora for demos and tests.
//!
//! The live annotation service lives in the `bws-service` crate.

pub mod analytics;
pub mod corpus;
pub mod design;
pub mod eval;
pub mod prompts;
pub mod reliability;
pub mod scoring;
pub mod stats;
pub mod synth;

pub use corpus::{Annotation, Corpus, CorpusError, Item, PromptType, ScoreRecord, Seed, SeedCategory, SeedSource, Tuple4};
