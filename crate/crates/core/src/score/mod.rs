//! Score-based priors.
//!
//! A [`ScoreModel`] exposes `∇ₓ log p_σ(x)` for the σ-noised data
//! distribution (variance-exploding convention: `x_σ = x + σ·ε`, the time
//! index *is* σ), its input-space vector–Jacobian product, and the one-shot
//! denoiser `D(x, σ) = x + σ²·s(x, σ)`.

mod dsm;
mod gmm;
mod mlp;

pub use dsm::{train_dsm, train_dsm_traced, DsmTrainConfig, LrSchedule, SigmaLaw, Weighting};
pub use gmm::GmmModel;
pub use mlp::{MlpScoreNet, SigmaFeatures};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Noise standard deviation σ > 0, in data units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self(sigma))
        } else {
            Err(Error::Contract(format!("noise level must be positive and finite, got {sigma}")))
        }
    }

    pub fn sigma(self) -> f64 {
        self.0
    }

    pub fn variance(self) -> f64 {
        self.0 * self.0
    }
}

impl TryFrom<f64> for NoiseLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NoiseLevel> for f64 {
    fn from(n: NoiseLevel) -> f64 {
        n.0
    }
}

/// Score evaluated at a point together with its pullback `v ↦ vᵀ ∂s/∂x`.
pub struct Linearization<'a> {
    pub score: Tensor,
    pullback: Box<dyn Fn(&Tensor) -> Tensor + Send + Sync + 'a>,
}

impl<'a> Linearization<'a> {
    pub fn new(score: Tensor, pullback: impl Fn(&Tensor) -> Tensor + Send + Sync + 'a) -> Self {
        Self {
            score,
            pullback: Box::new(pullback),
        }
    }

    pub fn vjp(&self, v: &Tensor) -> Tensor {
        (self.pullback)(v)
    }
}

pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: &Tensor, sigma: NoiseLevel) -> Tensor;

    /// Evaluate the score and keep what the reverse pass needs.
    fn linearize(&self, x: &Tensor, sigma: NoiseLevel) -> Linearization<'_>;

    fn score_vjp(&self, x: &Tensor, sigma: NoiseLevel, v: &Tensor) -> Tensor {
        self.linearize(x, sigma).vjp(v)
    }

    /// Tweedie one-shot denoiser.
    fn denoise(&self, x_t: &Tensor, sigma: NoiseLevel) -> Tensor {
        let mut out = x_t.clone();
        out.axpy(sigma.variance(), &self.score(x_t, sigma));
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.dim()] {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Any prior the lab can load from a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnyScoreModel {
    Gmm(GmmModel),
    MlpScore(MlpScoreNet),
}

impl ScoreModel for AnyScoreModel {
    fn dim(&self) -> usize {
        match self {
            AnyScoreModel::Gmm(m) => m.dim(),
            AnyScoreModel::MlpScore(m) => m.dim(),
        }
    }

    fn score(&self, x: &Tensor, sigma: NoiseLevel) -> Tensor {
        match self {
            AnyScoreModel::Gmm(m) => m.score(x, sigma),
            AnyScoreModel::MlpScore(m) => m.score(x, sigma),
        }
    }

    fn linearize(&self, x: &Tensor, sigma: NoiseLevel) -> Linearization<'_> {
        match self {
            AnyScoreModel::Gmm(m) => m.linearize(x, sigma),
            AnyScoreModel::MlpScore(m) => m.linearize(x, sigma),
        }
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &Tensor, sigma: NoiseLevel) -> Tensor {
        (**self).score(x, sigma)
    }
    fn linearize(&self, x: &Tensor, sigma: NoiseLevel) -> Linearization<'_> {
        (**self).linearize(x, sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_level_contract() {
        assert!(NoiseLevel::new(0.0).is_err());
        assert!(NoiseLevel::new(-1.0).is_err());
        assert!(NoiseLevel::new(f64::INFINITY).is_err());
        assert_eq!(NoiseLevel::new(0.5).unwrap().variance(), 0.25);
        let parsed: std::result::Result<NoiseLevel, _> = serde_json::from_str("-0.1");
        assert!(parsed.is_err());
    }
}
