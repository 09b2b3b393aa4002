//! Experiment orchestration: run configuration, cached artifacts, CSV outputs
//! and manifests.

pub mod config;
pub mod output;
pub mod runs;
pub mod workspace;

pub use config::RunConfig;
pub use output::{ExperimentKind, FileDigest, Manifest, Outcome, OutputSet};
pub use runs::*;
pub use workspace::{Split, Workspace};
