//! Feed-forward classifier head with an optional abstention output.

use nalgebra::DVector;
#[cfg(test)]
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{gamblers_loss_grad_with_payoff, gamblers_loss_with_payoff, sce_loss, sce_loss_grad, LossKind};
use super::param::Param;
use super::ModelError;
use crate::schema::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dims: usize,
    pub hidden: usize,
    pub labels: usize,
    pub task: TaskKind,
    pub loss: LossKind,
    pub seed: u64,
    /// Gambler's-loss payoff `o` in `-log(o * p + g)`, between 1 and the
    /// number of outcomes of one bet (`K` classes, or 2 for a label's
    /// present/absent bet). `None` means `0.9 * outcomes`. With `o = 1` the
    /// loss is minimized by always abstaining, so the head never learns.
    #[serde(default)]
    pub payoff: Option<f64>,
}

impl HeadConfig {
    /// Number of outcomes one bet is spread over.
    fn outcomes(&self) -> usize {
        match self.task {
            TaskKind::MultiClass => self.labels,
            TaskKind::MultiLabel => 2,
        }
    }

    pub fn resolved_payoff(&self) -> f64 {
        self.payoff.unwrap_or(0.9 * self.outcomes() as f64)
    }
}

/// Two-layer network: `input -> ReLU(hidden) -> logits`.
///
/// With the sigmoid cross-entropy loss every label probability is an
/// independent sigmoid. With the gambler's loss an extra abstention logit
/// is added: for multi-class tasks the `K + 1` logits share one softmax, so
/// label probabilities and the reservation `g` compete for mass; for
/// multi-label tasks `g` is its own sigmoid and each label becomes a
/// present/absent bet with `g` added to both outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierHead {
    config: HeadConfig,
    w1: Param,
    b1: Param,
    w2: Param,
    b2: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// Label probabilities conditional on not abstaining.
    pub probs: Vec<f64>,
    pub reservation: Option<f64>,
}

pub(crate) struct HeadTape {
    input: DVector<f64>,
    hidden_pre: DVector<f64>,
    hidden: DVector<f64>,
    logits: DVector<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ClassifierHead {
    pub fn new(config: HeadConfig) -> Result<Self, ModelError> {
        if config.input_dims == 0 || config.hidden == 0 || config.labels == 0 {
            return Err(ModelError::Config("head dimensions must be positive".into()));
        }
        if let Some(o) = config.payoff {
            if !(o >= 1.0 && o <= config.outcomes() as f64) {
                return Err(ModelError::Config(format!("payoff {o} outside [1, {}]", config.outcomes())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let outputs = config.labels + usize::from(config.loss == LossKind::Gl);
        let b1 = (6.0 / (config.input_dims + config.hidden) as f64).sqrt();
        let b2 = (6.0 / (config.hidden + outputs) as f64).sqrt();
        Ok(ClassifierHead {
            w1: Param::uniform(config.hidden, config.input_dims, b1, &mut rng),
            b1: Param::zeros(config.hidden, 1),
            w2: Param::uniform(outputs, config.hidden, b2, &mut rng),
            b2: Param::zeros(outputs, 1),
            config,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn abstains(&self) -> bool {
        self.config.loss == LossKind::Gl
    }

    pub(crate) fn forward(&self, input: &DVector<f64>) -> Result<(HeadOutput, HeadTape), ModelError> {
        if input.len() != self.config.input_dims {
            return Err(ModelError::Shape(format!(
                "representation has {} dims, head expects {}",
                input.len(),
                self.config.input_dims
            )));
        }
        let hidden_pre = &self.w1.value * input + self.b1.value.column(0);
        let hidden = hidden_pre.map(|v| v.max(0.0));
        let logits = &self.w2.value * &hidden + self.b2.value.column(0);
        let output = self.squash(logits.as_slice());
        Ok((output, HeadTape { input: input.clone(), hidden_pre, hidden, logits }))
    }

    fn squash(&self, logits: &[f64]) -> HeadOutput {
        let k = self.config.labels;
        match (self.config.loss, self.config.task) {
            (LossKind::Sce, _) => HeadOutput { probs: logits.iter().map(|&z| sigmoid(z)).collect(), reservation: None },
            (LossKind::Gl, TaskKind::MultiClass) => {
                let joint = softmax(logits);
                HeadOutput { probs: softmax(&logits[..k]), reservation: Some(joint[k]) }
            }
            (LossKind::Gl, TaskKind::MultiLabel) => HeadOutput {
                probs: logits[..k].iter().map(|&z| sigmoid(z)).collect(),
                reservation: Some(sigmoid(logits[k])),
            },
        }
    }

    /// Loss for one sample and its gradient with respect to the logits.
    pub(crate) fn loss_and_grad(&self, tape: &HeadTape, y: &[f64]) -> Result<(f64, DVector<f64>), ModelError> {
        let logits = tape.logits.as_slice();
        let k = self.config.labels;
        if y.len() != k {
            return Err(ModelError::Shape(format!("{} targets for {k} labels", y.len())));
        }
        match (self.config.loss, self.config.task) {
            (LossKind::Sce, _) => {
                let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
                let loss = sce_loss(y, &probs)?;
                let dp = sce_loss_grad(y, &probs)?;
                let dz = probs.iter().zip(&dp).map(|(p, d)| d * p * (1.0 - p));
                Ok((loss, DVector::from_iterator(k, dz)))
            }
            (LossKind::Gl, TaskKind::MultiClass) => {
                let joint = softmax(logits);
                let (probs, g) = (&joint[..k], joint[k]);
                let o = self.config.resolved_payoff();
                let loss = gamblers_loss_with_payoff(y, probs, g, o)?;
                let (dp, dg) = gamblers_loss_grad_with_payoff(y, probs, g, o)?;
                let dj: Vec<f64> = dp.into_iter().chain(std::iter::once(dg)).collect();
                let dot: f64 = dj.iter().zip(&joint).map(|(d, p)| d * p).sum();
                let dz = joint.iter().zip(&dj).map(|(p, d)| p * (d - dot));
                Ok((loss, DVector::from_iterator(k + 1, dz)))
            }
            (LossKind::Gl, TaskKind::MultiLabel) => {
                let sig: Vec<f64> = logits[..k].iter().map(|&z| sigmoid(z)).collect();
                let g = sigmoid(logits[k]);
                let present: Vec<f64> = sig.iter().map(|s| (1.0 - g) * s).collect();
                let absent: Vec<f64> = sig.iter().map(|s| (1.0 - g) * (1.0 - s)).collect();
                let y_absent: Vec<f64> = y.iter().map(|t| 1.0 - t).collect();
                let o = self.config.resolved_payoff();
                let loss = gamblers_loss_with_payoff(y, &present, g, o)?
                    + gamblers_loss_with_payoff(&y_absent, &absent, g, o)?;
                let (dp, dg1) = gamblers_loss_grad_with_payoff(y, &present, g, o)?;
                let (da, dg2) = gamblers_loss_grad_with_payoff(&y_absent, &absent, g, o)?;
                let mut dz = DVector::zeros(k + 1);
                let mut dg = dg1 + dg2;
                for i in 0..k {
                    let ds = (1.0 - g) * (dp[i] - da[i]);
                    dg += -sig[i] * dp[i] - (1.0 - sig[i]) * da[i];
                    dz[i] = ds * sig[i] * (1.0 - sig[i]);
                }
                dz[k] = dg * g * (1.0 - g);
                Ok((loss, dz))
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(&mut self, tape: &HeadTape, d_logits: &DVector<f64>) -> DVector<f64> {
        *self.w2.grad_mut() += d_logits * tape.hidden.transpose();
        *self.b2.grad_mut() += d_logits;
        let d_hidden = self.w2.value.transpose() * d_logits;
        let d_pre = d_hidden.zip_map(&tape.hidden_pre, |g, z| if z > 0.0 { g } else { 0.0 });
        *self.w1.grad_mut() += &d_pre * tape.input.transpose();
        *self.b1.grad_mut() += &d_pre;
        self.w1.value.transpose() * d_pre
    }

    fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub(crate) fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub(crate) fn step(&mut self, learning_rate: f64, t: u64) {
        for p in self.params_mut() {
            p.adam_step(learning_rate, t);
        }
    }

    pub fn predict(&self, input: &DVector<f64>) -> Result<HeadOutput, ModelError> {
        Ok(self.forward(input)?.0)
    }

    #[cfg(test)]
    fn weights(&mut self) -> [&mut DMatrix<f64>; 4] {
        [&mut self.w1.value, &mut self.b1.value, &mut self.w2.value, &mut self.b2.value]
    }
}
