use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trainable matrix with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Param {
    pub value: DMatrix<f64>,
    #[serde(skip)]
    pub grad: Option<DMatrix<f64>>,
    #[serde(skip)]
    moments: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Param {
    pub fn new(value: DMatrix<f64>) -> Self {
        Param { value, grad: None, moments: None }
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Self::new(DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound)))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(DMatrix::zeros(rows, cols))
    }

    pub fn grad_mut(&mut self) -> &mut DMatrix<f64> {
        let (r, c) = self.value.shape();
        self.grad.get_or_insert_with(|| DMatrix::zeros(r, c))
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// One Adam update; `t` is the 1-based step count.
    pub fn adam_step(&mut self, learning_rate: f64, t: u64) {
        let Some(grad) = self.grad.as_ref() else { return };
        let (r, c) = self.value.shape();
        let (m, v) = self
            .moments
            .get_or_insert_with(|| (DMatrix::zeros(r, c), DMatrix::zeros(r, c)));
        let c1 = 1.0 - BETA1.powi(t as i32);
        let c2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            self.value[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}
