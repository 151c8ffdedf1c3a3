//! Declarative experiments: configuration, cached stage graph, reports.

mod artifacts;
mod config;
mod pipeline;
mod report;
mod variant;
pub mod verify;

pub use artifacts::{DirLock, RunManifest, StageState, Workspace, MANIFEST_FILE};
pub use config::{ComposedPair, ExperimentConfig, IdentificationSource, PruneSection, SftInit, TrainSection, VariantSection};
pub use pipeline::{restrict, Pipeline, Policy, VariantRankings};
pub use report::{Correlation, Report, Summary, VariantAnalysis, FIGURE_DIRS};
pub use variant::Variant;
