//! Orchestration of the state-dependent fragility workflow: configuration,
//! staged execution with provenance manifests, artifact persistence and
//! SVG plot emission.

pub mod artifacts;
pub mod config;
pub mod doe_study;
pub mod error;
pub mod manifest;
pub mod plots;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
