//! Small σ-conditioned score network.
//!
//! The network sees `[x, log σ, sin(f·log σ), cos(f·log σ) …]` and its
//! output is divided by σ, so it predicts `−ε` rather than the score itself.
//! That keeps the regression target O(1) across the whole σ range.

use serde::{Deserialize, Serialize};

use super::{Linearization, NoiseLevel, ScoreModel};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFeatures {
    pub frequencies: Vec<f64>,
}

impl Default for SigmaFeatures {
    fn default() -> Self {
        Self {
            frequencies: vec![1.0, 2.0],
        }
    }
}

impl SigmaFeatures {
    pub fn len(&self) -> usize {
        1 + 2 * self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn encode(&self, sigma: f64, out: &mut Vec<f64>) {
        let l = sigma.ln();
        out.push(l);
        for f in &self.frequencies {
            out.push((f * l).sin());
            out.push((f * l).cos());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpScoreRepr", into = "MlpScoreRepr")]
pub struct MlpScoreNet {
    dim: usize,
    features: SigmaFeatures,
    net: Mlp,
}

#[derive(Serialize, Deserialize)]
struct MlpScoreRepr {
    dim: usize,
    activation: String,
    sigma_features: SigmaFeatures,
    widths: Vec<usize>,
    net: Mlp,
}

impl TryFrom<MlpScoreRepr> for MlpScoreNet {
    type Error = Error;
    fn try_from(r: MlpScoreRepr) -> Result<Self> {
        if r.activation != "tanh" {
            return Err(Error::Contract(format!("unsupported activation {:?}", r.activation)));
        }
        let net = Self::from_parts(r.dim, r.sigma_features, r.net)?;
        if net.net.widths() != r.widths {
            return Err(Error::Contract("declared widths do not match the layers".into()));
        }
        Ok(net)
    }
}

impl From<MlpScoreNet> for MlpScoreRepr {
    fn from(n: MlpScoreNet) -> Self {
        MlpScoreRepr {
            dim: n.dim,
            activation: "tanh".into(),
            sigma_features: n.features,
            widths: n.net.widths(),
            net: n.net,
        }
    }
}

impl MlpScoreNet {
    /// `hidden` lists the hidden widths; input and output widths follow
    /// from `dim` and the feature set.
    pub fn new(dim: usize, hidden: &[usize], features: SigmaFeatures, rng: &mut RngStream) -> Result<Self> {
        let mut widths = vec![dim + features.len()];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let net = Mlp::init(&widths, rng)?;
        Self::from_parts(dim, features, net)
    }

    pub fn from_parts(dim: usize, features: SigmaFeatures, net: Mlp) -> Result<Self> {
        net.validate()?;
        if net.input_dim() != dim + features.len() || net.output_dim() != dim {
            return Err(Error::Contract(format!(
                "network widths {:?} do not fit data dimension {dim} with {} σ-features",
                net.widths(),
                features.len()
            )));
        }
        Ok(Self { dim, features, net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn features(&self) -> &SigmaFeatures {
        &self.features
    }

    fn input(&self, x: &Tensor, sigma: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.net.input_dim());
        v.extend_from_slice(x.data());
        self.features.encode(sigma, &mut v);
        v
    }

    /// Per-sample denoising loss `‖D(x + σε, σ) − x‖²`; accumulates
    /// `weight · ∂loss/∂θ` into `grads`.
    pub(crate) fn dsm_loss_and_grad(
        &self,
        x: &Tensor,
        sigma: f64,
        eps: &Tensor,
        weight: f64,
        grads: &mut MlpGrads,
    ) -> f64 {
        let mut x_t = x.clone();
        x_t.axpy(sigma, eps);
        let cache = self.net.forward_cached(&self.input(&x_t, sigma));
        // D − x = σ(ε + out)
        let resid: Vec<f64> = cache
            .output()
            .iter()
            .zip(eps.data())
            .map(|(o, e)| sigma * (o + e))
            .collect();
        let loss: f64 = resid.iter().map(|r| r * r).sum();
        let g_out: Vec<f64> = resid.iter().map(|r| weight * 2.0 * sigma * r).collect();
        self.net.backward(&cache, &g_out, Some(grads));
        weight * loss
    }
}

impl ScoreModel for MlpScoreNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &Tensor, sigma: NoiseLevel) -> Tensor {
        let s = sigma.sigma();
        let out = self.net.forward(&self.input(x, s));
        Tensor::from_vec(out.into_iter().map(|o| o / s).collect())
    }

    fn linearize(&self, x: &Tensor, sigma: NoiseLevel) -> Linearization<'_> {
        let s = sigma.sigma();
        let cache = self.net.forward_cached(&self.input(x, s));
        let score = Tensor::from_vec(cache.output().iter().map(|o| o / s).collect());
        let dim = self.dim;
        Linearization::new(score, move |v: &Tensor| {
            let g: Vec<f64> = v.data().iter().map(|vi| vi / s).collect();
            let mut gin = self.net.backward(&cache, &g, None);
            gin.truncate(dim);
            Tensor::from_vec(gin)
        })
    }
}
