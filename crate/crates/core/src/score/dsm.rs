//! Denoising score matching: minimise `E‖D(x + σε, σ) − x‖²` over sampled
//! `(x, σ, ε)` minibatches with Adam.

use serde::{Deserialize, Serialize};

use super::MlpScoreNet;
use crate::error::{Error, Result};
use crate::nn::MlpGrads;
use crate::optim::AdamState;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaLaw {
    #[default]
    LogUniform,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Weighting {
    #[default]
    Constant,
    /// `w(σ) = σ^power`
    SigmaPower { power: f64 },
}

impl Weighting {
    pub fn weight(self, sigma: f64) -> f64 {
        match self {
            Weighting::Constant => 1.0,
            Weighting::SigmaPower { power } => sigma.powf(power),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` towards zero over the run.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsmTrainConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_law: SigmaLaw,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub weighting: Weighting,
}

impl Default for DsmTrainConfig {
    fn default() -> Self {
        Self {
            sigma_min: 0.02,
            sigma_max: 2.0,
            sigma_law: SigmaLaw::LogUniform,
            batch_size: 128,
            iterations: 20_000,
            lr: 3e-3,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            weighting: Weighting::Constant,
        }
    }
}

impl DsmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0) || !(self.sigma_min <= self.sigma_max) || !self.sigma_max.is_finite() {
            return Err(Error::Config(format!(
                "σ range must satisfy 0 < σ_min ≤ σ_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    fn sample_sigma(&self, rng: &mut RngStream) -> f64 {
        match self.sigma_law {
            SigmaLaw::Uniform => rng.uniform(self.sigma_min, self.sigma_max),
            SigmaLaw::LogUniform => rng.uniform(self.sigma_min.ln(), self.sigma_max.ln()).exp(),
        }
    }

    fn lr_at(&self, iteration: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let frac = iteration as f64 / self.iterations as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

pub fn train_dsm(net: MlpScoreNet, data: &[Tensor], cfg: &DsmTrainConfig) -> Result<MlpScoreNet> {
    train_dsm_traced(net, data, cfg).map(|(net, _)| net)
}

/// Like [`train_dsm`], also returning the minibatch loss of every iteration.
pub fn train_dsm_traced(
    mut net: MlpScoreNet,
    data: &[Tensor],
    cfg: &DsmTrainConfig,
) -> Result<(MlpScoreNet, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training data is empty".into()));
    }
    let dim = crate::score::ScoreModel::dim(&net);
    if let Some(bad) = data.iter().find(|x| x.shape() != [dim]) {
        return Err(Error::ShapeMismatch {
            expected: vec![dim],
            actual: bad.shape().to_vec(),
        });
    }
    let mut states: Vec<AdamState> = net.net_mut().params_mut().map(|p| AdamState::new(p.shape())).collect();
    let mut rng = RngStream::new(cfg.seed, 0x5d5_7a11);
    let mut history = Vec::with_capacity(cfg.iterations);
    let inv_batch = 1.0 / cfg.batch_size as f64;
    for it in 0..cfg.iterations {
        let mut grads = MlpGrads::zeros_like(net.net());
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let x = &data[rng.index(data.len())];
            let sigma = cfg.sample_sigma(&mut rng);
            let eps = rng.gaussian(&[dim]);
            loss += net.dsm_loss_and_grad(x, sigma, &eps, cfg.weighting.weight(sigma), &mut grads);
        }
        loss *= inv_batch;
        grads.scale(inv_batch);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::TrainingDiverged { iteration: it, loss });
        }
        let lr = cfg.lr_at(it);
        for ((p, g), st) in net.net_mut().params_mut().zip(grads.params()).zip(&mut states) {
            st.update(p, g, lr)?;
        }
        if it % 2000 == 0 {
            tracing::debug!(iteration = it, loss, "dsm");
        }
        history.push(loss);
    }
    Ok((net, history))
}
