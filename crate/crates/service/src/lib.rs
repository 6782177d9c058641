//! HTTP annotation service for best-worst tuples.
//!
//! Annotators fetch a tuple, pick best and worst, and submit. The service
//! steers work toward the least-annotated tuples, holds each handed-out
//! tuple for one annotator until a deadline, enforces a per-annotator cap,
//! and appends every accepted judgment to `annotations.jsonl` in the corpus
//! directory.

pub mod http;
pub mod policy;
pub mod store;

pub use http::{router, serve, AppState};
pub use policy::{AssignmentPolicy, CapBasis};
pub use store::{Assignment, Clock, ManualClock, Progress, ReserveOutcome, Store, StoreError, Submission, SystemClock};
