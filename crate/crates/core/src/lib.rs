//! Robustness and explanation-fidelity evaluation for wellness-dimension
//! text classifiers.

pub mod abstention;
pub mod attention;
pub mod ingest;
pub mod metrics;
pub mod modeling;
pub mod schema;
pub mod llm;
pub mod orchestrate;
