//! Reproducible shared-task retrieval experiments.
//!
//! `irexp` is a self-contained experiment engine for information retrieval:
//!
//! * [`formats`] reads and writes the interchange files (`documents.jsonl.gz`,
//!   `topics.jsonl.gz`, `re-rank.jsonl.gz`, `qrels.txt`, TREC run files).
//! * [`dataset_hub`] registers immutable datasets, synthesizes `default_text`,
//!   builds re-rank files and enforces the participant / organizer /
//!   unregistered access matrix, including blind datasets.
//! * [`registry`] stores immutable, versioned components and uploads and
//!   resolves them into pipeline DAGs.
//! * [`executor`] runs pipelines inside a network-less sandbox over read-only
//!   inputs and caches every node output under a content-addressed key.
//! * [`evaluator`] sanity-checks runs and computes nDCG@k per query and on
//!   average.
//! * [`analytics`] builds leaderboards and preference-reproducibility reports
//!   (effect ratio, delta relative improvement).
//! * [`archive`] exports a task into a self-contained directory, imports it
//!   elsewhere and replays archived software.
//!
//! [`Platform`] ties these together over one store directory; the `irexp`
//! binary is a thin command-line wrapper around it (see [`cli`]).
//!
//! The `examples/` directory of this crate contains one runnable program per
//! capability, e.g.
//!
//! ```bash
//! cargo run -p irexp --example toy_shared_task
//! ```

pub mod analytics;
pub mod archive;
pub mod cli;
pub mod dataset_hub;
pub mod digest;
pub mod error;
pub mod evaluator;
pub mod executor;
pub mod fixtures;
mod ids;
pub mod formats;
pub mod platform;
pub mod registry;
pub mod toy;

pub use error::{Error, Result};
pub use platform::{Platform, PlatformConfig};
