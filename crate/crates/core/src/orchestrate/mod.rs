//! Experiment runs: config loading, the load → split → train → predict →
//! evaluate pipeline, prediction import, and report rendering.
//!
//! Every run writes under `<output_dir>/runs/<hash>/`, where `<hash>` is
//! derived from the configuration, so identical configs land in the same
//! directory and produce byte-identical reports.

mod config;
mod import;
mod report;
mod run;

use thiserror::Error;

pub use config::{apply_override, DatasetConfig, DatasetKind, ExperimentConfig, LlmSection, ModelConfig, ModelKind};
pub use import::{export_predictions, import_predictions, ImportedPredictions, PREDICTIONS_FILE};
pub use report::{render_report, AggregateRow, EvaluationReport, ReportFormat, ReportRow};
pub use run::{load_dataset, run_experiment, run_llm_experiment, RunSummary, FAILURE_FILE, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum OrchestrateError {
    /// Rejected before any work started.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String, provider: bool },
    #[error("prediction import failed: {}", .problems.join("; "))]
    Import { problems: Vec<String> },
    #[error("report error: {0}")]
    Report(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl OrchestrateError {
    /// 2 for bad input, 3 for provider failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestrateError::Config(_) | OrchestrateError::Import { .. } => 2,
            OrchestrateError::Stage { provider: true, .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        OrchestrateError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
