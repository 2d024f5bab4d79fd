//! Sigmoid cross-entropy and the gambler's loss, with analytic gradients.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` before
/// any logarithm.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Sce,
    Gl,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Sce => "SCE",
            LossKind::Gl => "GL",
        }
    }
}

fn check_lengths(y: &[f64], probs: &[f64]) -> Result<(), ModelError> {
    if y.len() != probs.len() {
        return Err(ModelError::Shape(format!("{} targets vs {} probabilities", y.len(), probs.len())));
    }
    Ok(())
}

fn interior(p: f64) -> bool {
    p > PROB_EPSILON && p < 1.0 - PROB_EPSILON
}

/// Mean over labels of `-[y log p + (1 - y) log(1 - p)]`.
pub fn sce_loss(y: &[f64], probs: &[f64]) -> Result<f64, ModelError> {
    check_lengths(y, probs)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = y
        .iter()
        .zip(probs)
        .map(|(&t, &p)| {
            let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Gradient of [`sce_loss`] with respect to `probs` (zero where clamped).
pub fn sce_loss_grad(y: &[f64], probs: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_lengths(y, probs)?;
    let k = y.len() as f64;
    Ok(y.iter()
        .zip(probs)
        .map(|(&t, &p)| if interior(p) { (-t / p + (1.0 - t) / (1.0 - p)) / k } else { 0.0 })
        .collect())
}

fn check_reservation(g: f64) -> Result<(), ModelError> {
    if !(g.is_finite() && g >= 0.0) {
        return Err(ModelError::Domain(format!("reservation {g} must be finite and non-negative")));
    }
    Ok(())
}

/// `-sum_i y_i log(p_i + g)`, with `p_i + g` clamped into `[PROB_EPSILON, 1]`.
pub fn gamblers_loss(y: &[f64], probs: &[f64], g: f64) -> Result<f64, ModelError> {
    gamblers_loss_with_payoff(y, probs, g, 1.0)
}

/// Gradients of [`gamblers_loss`] with respect to `probs` and `g`.
pub fn gamblers_loss_grad(y: &[f64], probs: &[f64], g: f64) -> Result<(Vec<f64>, f64), ModelError> {
    gamblers_loss_grad_with_payoff(y, probs, g, 1.0)
}

fn check_payoff(o: f64) -> Result<(), ModelError> {
    if !(o.is_finite() && o >= 1.0) {
        return Err(ModelError::Domain(format!("payoff {o} must be at least 1")));
    }
    Ok(())
}

/// `-sum_i y_i log(o * p_i + g)` with the argument clamped into
/// `[PROB_EPSILON, o]`. A payoff `o > 1` rewards a correct bet more than
/// abstaining; at `o = 1` this is [`gamblers_loss`].
pub fn gamblers_loss_with_payoff(y: &[f64], probs: &[f64], g: f64, o: f64) -> Result<f64, ModelError> {
    check_lengths(y, probs)?;
    check_reservation(g)?;
    check_payoff(o)?;
    Ok(y.iter()
        .zip(probs)
        .map(|(&t, &p)| -t * (o * p + g).clamp(PROB_EPSILON, o).ln())
        .sum())
}

/// Gradients of [`gamblers_loss_with_payoff`] with respect to `probs` and
/// `g` (zero where clamped).
pub fn gamblers_loss_grad_with_payoff(
    y: &[f64],
    probs: &[f64],
    g: f64,
    o: f64,
) -> Result<(Vec<f64>, f64), ModelError> {
    check_lengths(y, probs)?;
    check_reservation(g)?;
    check_payoff(o)?;
    let mut dg = 0.0;
    let grads: Vec<f64> = y
        .iter()
        .zip(probs)
        .map(|(&t, &p)| {
            let s = o * p + g;
            if s > PROB_EPSILON && s < o {
                dg += -t / s;
                -t * o / s
            } else {
                0.0
            }
        })
        .collect();
    Ok((grads, dg))
}
