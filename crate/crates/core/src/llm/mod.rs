//! Prompted-LLM evaluation: prompt construction, reply parsing, chat
//! transports with offline replay, and scoring.

mod client;
mod evaluate;
mod parse;
mod prompt;
mod transcript;

use thiserror::Error;

pub use client::{ChatTransport, LiveTransport, ProviderConfig, RateLimiter, RecordingTransport, ReplayTransport, RetryPolicy};
pub use evaluate::{
    evaluate_llm, explanation_overlaps, run_llm, word_bag, FailureMode, LlmEvaluation, LlmOutcome, LlmRunConfig,
    LlmSampleResult,
};
pub use parse::{format_response, parse_response, ParseError, ParsedLLMResponse};
pub use prompt::{
    build_few_shot_prompt, build_zero_shot_prompt, sample_shots, PromptBundle, Shot, ShotFormat, CLASS_COUNT,
    FEW_SHOT_TEMPLATE_ID, POST_SLOT, ZERO_SHOT_TEMPLATE, ZERO_SHOT_TEMPLATE_ID,
};
pub use transcript::{request_hash, TranscriptEntry, TranscriptStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("prompt error: {0}")]
    Prompt(String),
    #[error("class {class} has {available} training posts, {needed} shots requested")]
    Sampling { class: usize, available: usize, needed: usize },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("quota exhausted: {0}")]
    Quota(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("no recorded reply for request {hash}")]
    ReplayMiss { hash: String },
    #[error("transcript error: {0}")]
    Transcript(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

impl LlmError {
    /// Worth retrying after a pause.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Timeout(_) | LlmError::Transient(_))
    }

    /// Raised by the provider or transport rather than by local inputs.
    pub fn is_provider(&self) -> bool {
        matches!(
            self,
            LlmError::Auth(_)
                | LlmError::Quota(_)
                | LlmError::Timeout(_)
                | LlmError::Transient(_)
                | LlmError::Provider(_)
                | LlmError::ReplayMiss { .. }
        )
    }
}
