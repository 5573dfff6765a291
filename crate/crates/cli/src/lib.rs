//! Manifest-driven batch driver: every pipeline stage is reachable as a
//! subcommand, and `pipeline` runs them all.

pub mod manifest;
pub mod pipeline;
pub mod runlog;
pub mod simulate;

pub use manifest::RunManifest;
pub use pipeline::{plan, run, RunOutcome, Stage};
