//! Purification objectives as single-draw Monte-Carlo estimators, with exact
//! gradients in the optimisation variable.
//!
//! With `x_t = x + σε1`, `r1 = D(x_t) − x` and `r2 = D(x_t) − D(x_a + σε2)`:
//!
//! * Diff: `‖r1‖²`
//! * MSE:  `‖r1‖² + λ‖x − x_a‖²`
//! * SR:   `‖r1‖² + λ_reg‖r2‖²`
//!
//! Since `∂r1/∂x = σ²J_s` and `∂r2/∂x = I + σ²J_s`, every gradient needs a
//! single score VJP: `2σ²J_sᵀ(r1 + λ_reg·r2) + 2λ_reg·r2 (+ 2λ(x − x_a))`.
//! The `x_a` branch is a constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::score::{NoiseLevel, ScoreModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    Diff,
    Mse { lambda: f64 },
    Sr {
        #[serde(default = "one")]
        lambda_reg: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Sr { lambda_reg: 1.0 }
    }
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        let w = match *self {
            LossKind::Diff => return Ok(()),
            LossKind::Mse { lambda } => lambda,
            LossKind::Sr { lambda_reg } => lambda_reg,
        };
        if w >= 0.0 && w.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weight must be finite and ≥ 0, got {w}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Diff => "diff",
            LossKind::Mse { .. } => "mse",
            LossKind::Sr { .. } => "sr",
        }
    }

    /// Whether the loss evaluates the attacked branch `D(x_a + σε2)`.
    pub fn uses_reference_branch(&self) -> bool {
        matches!(self, LossKind::Sr { .. })
    }

    /// Score-model forward evaluations spent by one loss gradient.
    pub fn forwards_per_grad(&self) -> u64 {
        if self.uses_reference_branch() {
            2
        } else {
            1
        }
    }
}

/// One draw `(σ, ε1, ε2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSample {
    pub sigma: NoiseLevel,
    pub eps1: Tensor,
    pub eps2: Tensor,
}

impl LossSample {
    pub fn new(sigma: NoiseLevel, eps1: Tensor, eps2: Tensor) -> Result<Self> {
        eps1.check_same_shape(&eps2)?;
        Ok(Self { sigma, eps1, eps2 })
    }

    /// Draws ε1 then ε2 from `rng`.
    pub fn draw(sigma: NoiseLevel, dim: usize, rng: &mut RngStream) -> Self {
        let eps1 = rng.gaussian(&[dim]);
        let eps2 = rng.gaussian(&[dim]);
        Self { sigma, eps1, eps2 }
    }

    fn noised(&self, x: &Tensor, eps: &Tensor) -> Tensor {
        let mut t = x.clone();
        t.axpy(self.sigma.sigma(), eps);
        t
    }
}

/// Value and gradient of one sampled loss plus the model work it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Tensor,
    pub forwards: u64,
    pub vjps: u64,
}

pub fn diff_loss(model: &impl ScoreModel, x: &Tensor, s: &LossSample) -> f64 {
    let x_t = s.noised(x, &s.eps1);
    (&model.denoise(&x_t, s.sigma) - x).norm_sq()
}

pub fn mse_loss(model: &impl ScoreModel, x: &Tensor, x_a: &Tensor, lambda: f64, s: &LossSample) -> f64 {
    diff_loss(model, x, s) + lambda * (x - x_a).norm_sq()
}

pub fn sr_loss(model: &impl ScoreModel, x: &Tensor, x_a: &Tensor, lambda_reg: f64, s: &LossSample) -> f64 {
    let d1 = model.denoise(&s.noised(x, &s.eps1), s.sigma);
    let d2 = model.denoise(&s.noised(x_a, &s.eps2), s.sigma);
    (&d1 - x).norm_sq() + lambda_reg * (&d1 - &d2).norm_sq()
}

pub fn loss_value(kind: LossKind, model: &impl ScoreModel, x: &Tensor, x_a: &Tensor, s: &LossSample) -> f64 {
    match kind {
        LossKind::Diff => diff_loss(model, x, s),
        LossKind::Mse { lambda } => mse_loss(model, x, x_a, lambda, s),
        LossKind::Sr { lambda_reg } => sr_loss(model, x, x_a, lambda_reg, s),
    }
}

/// Gradient of the sampled loss with respect to `x`.
pub fn loss_grad(kind: LossKind, model: &impl ScoreModel, x: &Tensor, x_a: &Tensor, s: &LossSample) -> Tensor {
    let x_t = s.noised(x, &s.eps1);
    evaluate(kind, model, &x_t, x, x_a, s).grad
}

/// Gradient with respect to the noisy variable `x_t = x + σε1`. Equal to
/// [`loss_grad`] at `x = x_t − σε1`; `s.eps1` is not consulted, `eps1` is.
pub fn loss_grad_at_noisy(
    kind: LossKind,
    model: &impl ScoreModel,
    x_t: &Tensor,
    eps1: &Tensor,
    x_a: &Tensor,
    s: &LossSample,
) -> Tensor {
    loss_eval_at_noisy(kind, model, x_t, eps1, x_a, s).grad
}

pub fn loss_eval_at_noisy(
    kind: LossKind,
    model: &impl ScoreModel,
    x_t: &Tensor,
    eps1: &Tensor,
    x_a: &Tensor,
    s: &LossSample,
) -> LossEval {
    let mut x = x_t.clone();
    x.axpy(-s.sigma.sigma(), eps1);
    evaluate(kind, model, x_t, &x, x_a, s)
}

pub fn loss_eval(kind: LossKind, model: &impl ScoreModel, x: &Tensor, x_a: &Tensor, s: &LossSample) -> LossEval {
    let x_t = s.noised(x, &s.eps1);
    evaluate(kind, model, &x_t, x, x_a, s)
}

fn evaluate(
    kind: LossKind,
    model: &impl ScoreModel,
    x_t: &Tensor,
    x: &Tensor,
    x_a: &Tensor,
    s: &LossSample,
) -> LossEval {
    let var = s.sigma.variance();
    let lin = model.linearize(x_t, s.sigma);
    let mut d1 = x_t.clone();
    d1.axpy(var, &lin.score);
    let mut forwards = 1;
    let mut direct: Option<(f64, Tensor)> = None;
    match kind {
        LossKind::Diff => {}
        LossKind::Mse { lambda } => {
            direct = Some((2.0 * lambda, x - x_a));
        }
        LossKind::Sr { lambda_reg } => {
            // r2 = D(x_t) − D(x_a + σε2), built in place
            let mut r2 = s.noised(x_a, &s.eps2);
            let score2 = model.score(&r2, s.sigma);
            r2.axpy(var, &score2);
            forwards += 1;
            for (a, &b) in r2.data_mut().iter_mut().zip(d1.data()) {
                *a = b - *a;
            }
            direct = Some((2.0 * lambda_reg, r2));
        }
    }
    let mut cotangent = d1;
    cotangent.axpy(-1.0, x);
    let mut value = cotangent.norm_sq();
    match (&kind, &direct) {
        (LossKind::Mse { lambda }, Some((_, anchor))) => value += lambda * anchor.norm_sq(),
        (LossKind::Sr { lambda_reg }, Some((_, r2))) => {
            value += lambda_reg * r2.norm_sq();
            cotangent.axpy(*lambda_reg, r2);
        }
        _ => {}
    }
    let mut grad = lin.vjp(&cotangent);
    grad.scale_in_place(2.0 * var);
    if let Some((w, d)) = direct {
        grad.axpy(w, &d);
    }
    LossEval {
        value,
        grad,
        forwards,
        vjps: 1,
    }
}
