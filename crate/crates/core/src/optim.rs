//! Adam with bias correction, plus a plain gradient step for the purifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with β1 = 0.9, β2 = 0.999, eps = 1e-8.
    pub fn new(shape: &[usize]) -> Self {
        Self::with_betas(shape, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(shape: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// In-place variant of [`adam_step`] for training loops.
    pub fn update(&mut self, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        param.check_same_shape(grad)?;
        param.check_same_shape(&self.m)?;
        if !(lr > 0.0) {
            return Err(Error::Contract(format!("learning rate must be positive, got {lr}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let inv_bc1 = 1.0 / (1.0 - self.beta1.powi(t));
        let inv_bc2 = 1.0 / (1.0 - self.beta2.powi(t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, &g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(self.m.data_mut().iter_mut().zip(self.v.data_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m * inv_bc1) / ((*v * inv_bc2).sqrt() + eps);
        }
        Ok(())
    }
}

/// One Adam step. Returns the advanced state and the updated parameter.
pub fn adam_step(
    state: &AdamState,
    param: &Tensor,
    grad: &Tensor,
    lr: f64,
) -> Result<(AdamState, Tensor)> {
    let mut next = state.clone();
    let mut p = param.clone();
    next.update(&mut p, grad, lr)?;
    Ok((next, p))
}

/// Update rule used by the purifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// `x ← x − η·grad`.
    PlainGd,
}

/// Optimizer state for a single iterate.
#[derive(Debug, Clone)]
pub enum Stepper {
    Adam(AdamState),
    PlainGd,
}

impl Stepper {
    pub fn new(kind: OptimizerKind, shape: &[usize]) -> Self {
        match kind {
            OptimizerKind::Adam => Stepper::Adam(AdamState::new(shape)),
            OptimizerKind::PlainGd => Stepper::PlainGd,
        }
    }

    pub fn step(&mut self, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        match self {
            Stepper::Adam(state) => state.update(param, grad, lr),
            Stepper::PlainGd => {
                param.check_same_shape(grad)?;
                param.axpy(-lr, grad);
                Ok(())
            }
        }
    }
}
