//! Classifier construction over pluggable text encoders.
//!
//! An [`EncoderAdapter`] turns text into a fixed-size representation and a
//! row-stochastic attention matrix. A [`ClassifierHead`] maps the
//! representation to per-label probabilities, plus an abstention score when
//! trained with the gambler's loss.

mod encoder;
mod head;
mod loss;
mod param;
mod train;

use std::any::Any;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionRecord;
use crate::schema::{LabelVector, TaskKind};

pub use encoder::{reference_encoder, ReferenceEncoder, ReferenceEncoderConfig};
pub use head::{ClassifierHead, HeadConfig, HeadOutput};
pub use loss::{
    gamblers_loss, gamblers_loss_grad, gamblers_loss_grad_with_payoff, gamblers_loss_with_payoff, sce_loss, sce_loss_grad, LossKind, PROB_EPSILON,
};
pub use train::{predict, train, Prediction, TrainConfig, TrainLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid training data: {0}")]
    Data(String),
}

/// Output of one encoder pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub representation: DVector<f64>,
    pub attention: AttentionRecord,
    /// Input was cut to the encoder's maximum length.
    pub truncated: bool,
}

/// Integration point for text encoders.
///
/// Frozen encoders only implement the required methods. Encoders that can
/// be fine-tuned override the training hooks: `forward_train` returns an
/// opaque tape that `backward` consumes to accumulate gradients, and `step`
/// applies them.
pub trait EncoderAdapter {
    fn identity(&self) -> String;

    fn max_length(&self) -> usize;

    fn dims(&self) -> usize;

    fn encode(&self, sample_id: &str, text: &str) -> Result<Encoded, ModelError>;

    fn is_trainable(&self) -> bool {
        false
    }

    fn forward_train(
        &self,
        text: &str,
    ) -> Result<(DVector<f64>, Option<Box<dyn Any>>), ModelError> {
        Ok((self.encode("", text)?.representation, None))
    }

    fn backward(&mut self, _tape: &dyn Any, _grad: &DVector<f64>) {}

    fn zero_grad(&mut self) {}

    fn step(&mut self, _learning_rate: f64, _t: u64) {}
}

/// Per-sample prediction.
///
/// `probs` are the label probabilities conditional on the model committing
/// to an answer; `reservation` is the abstention score `g` and is present
/// only for heads trained with the gambler's loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub task: TaskKind,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservation: Option<f64>,
    #[serde(default)]
    pub truncated: bool,
}

impl PredictionRecord {
    /// Multi-label: every label with probability at least 0.5. Multi-class:
    /// the argmax, ties to the lower index.
    pub fn predicted(&self) -> LabelVector {
        match self.task {
            TaskKind::MultiLabel => {
                LabelVector::MultiLabel { values: self.probs.iter().map(|&p| p >= 0.5).collect() }
            }
            TaskKind::MultiClass => LabelVector::MultiClass { class: argmax(&self.probs) },
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(task: TaskKind, probs: &[f64]) -> PredictionRecord {
        PredictionRecord {
            sample_id: "s".into(),
            task,
            probs: probs.to_vec(),
            reservation: None,
            truncated: false,
        }
    }

    #[test]
    fn argmax_and_threshold() {
        assert_eq!(
            rec(TaskKind::MultiClass, &[0.1, 0.6, 0.2, 0.1]).predicted(),
            LabelVector::MultiClass { class: 1 }
        );
        assert_eq!(
            rec(TaskKind::MultiLabel, &[0.51, 0.49]).predicted(),
            LabelVector::MultiLabel { values: vec![true, false] }
        );
        assert_eq!(argmax(&[0.3, 0.3, 0.1]), 0);
    }
}
