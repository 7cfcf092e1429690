//! Evaluation adversaries: projected gradient ascent on cross-entropy with
//! pluggable gradient oracles and EOT averaging.

use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::error::{Error, Result};
use crate::purify::{purify, sample_noise_level, PurifierConfig};
use crate::rng::{mix, RngStream};
use crate::score::ScoreModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatModel {
    pub norm: Norm,
    pub epsilon: f64,
}

impl ThreatModel {
    pub fn new(norm: Norm, epsilon: f64) -> Result<Self> {
        let t = Self { norm, epsilon };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("attack budget must be positive, got {}", self.epsilon)))
        }
    }

    pub fn norm_of(&self, d: &Tensor) -> f64 {
        match self.norm {
            Norm::L2 => d.norm2(),
            Norm::Linf => d.norm_inf(),
        }
    }
}

impl Default for ThreatModel {
    fn default() -> Self {
        Self {
            norm: Norm::Linf,
            epsilon: 0.3,
        }
    }
}

/// Where attack gradients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Gradient of the bare classifier (transfer attack).
    #[default]
    ClassifierOnly,
    /// Purify, then pass the classifier gradient back unchanged.
    BpdaIdentity,
    /// Differentiate `classifier(denoise(x + σε, σ))` exactly.
    OneShotApprox,
    /// Central differences through the seeded purifier. Costs `2d`
    /// purifications per gradient, so only for tiny configurations.
    ExactUnroll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub mode: OracleMode,
    /// Defaults to ε/4.
    pub step_size: Option<f64>,
    pub iterations: usize,
    pub eot_samples: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::transfer_pgd()
    }
}

impl AttackConfig {
    /// 40 iterations, α = ε/4, classifier gradients.
    pub fn transfer_pgd() -> Self {
        Self {
            mode: OracleMode::ClassifierOnly,
            step_size: None,
            iterations: 40,
            eot_samples: 1,
            random_start: false,
            seed: 0,
        }
    }

    /// 50 iterations × 15 EOT samples through an identity backward pass.
    pub fn bpda_eot() -> Self {
        Self {
            mode: OracleMode::BpdaIdentity,
            iterations: 50,
            eot_samples: 15,
            ..Self::transfer_pgd()
        }
    }

    /// 20 iterations × 20 EOT samples through the one-shot denoiser.
    pub fn pgd_eot_oneshot() -> Self {
        Self {
            mode: OracleMode::OneShotApprox,
            iterations: 20,
            eot_samples: 20,
            ..Self::transfer_pgd()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eot_samples == 0 {
            return Err(Error::Config("EOT sample count must be at least 1".into()));
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Config(format!("step size must be positive, got {a}")));
            }
        }
        Ok(())
    }

    pub fn alpha(&self, threat: &ThreatModel) -> f64 {
        self.step_size.unwrap_or(threat.epsilon / 4.0)
    }
}

/// A (possibly stochastic) gradient of the attacked loss at `x`.
pub trait LossGradient {
    fn loss_grad(&self, x: &Tensor, y: usize, rng: &mut RngStream) -> Result<Tensor>;
}

impl<F> LossGradient for F
where
    F: Fn(&Tensor, usize, &mut RngStream) -> Result<Tensor>,
{
    fn loss_grad(&self, x: &Tensor, y: usize, rng: &mut RngStream) -> Result<Tensor> {
        self(x, y, rng)
    }
}

/// Gradient oracle composed from a classifier and, for the adaptive modes,
/// the defense it attacks.
pub struct GradOracle<'a, M> {
    pub mode: OracleMode,
    pub classifier: &'a Classifier,
    pub model: &'a M,
    pub defense: &'a PurifierConfig,
}

impl<'a, M: ScoreModel> GradOracle<'a, M> {
    pub fn new(mode: OracleMode, classifier: &'a Classifier, model: &'a M, defense: &'a PurifierConfig) -> Self {
        Self {
            mode,
            classifier,
            model,
            defense,
        }
    }
}

/// `Jᵀg` of the one-shot denoiser at `x + σε`: `g + σ²·J_sᵀg`, where `g` is
/// the classifier gradient at the denoised point.
pub fn one_shot_gradient(
    classifier: &Classifier,
    model: &impl ScoreModel,
    defense: &PurifierConfig,
    x: &Tensor,
    y: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let sigma = sample_noise_level(&defense.noise, rng)?;
    let mut x_t = x.clone();
    x_t.axpy(sigma.sigma(), &rng.gaussian(&[x.len()]));
    let lin = model.linearize(&x_t, sigma);
    let mut den = x_t;
    den.axpy(sigma.variance(), &lin.score);
    let g = classifier.loss_input_grad(&den, y)?;
    let mut out = lin.vjp(&g);
    out.scale_in_place(sigma.variance());
    out.axpy(1.0, &g);
    Ok(out)
}

impl<M: ScoreModel> LossGradient for GradOracle<'_, M> {
    fn loss_grad(&self, x: &Tensor, y: usize, rng: &mut RngStream) -> Result<Tensor> {
        match self.mode {
            OracleMode::ClassifierOnly => self.classifier.loss_input_grad(x, y),
            OracleMode::BpdaIdentity => {
                let (p, _) = purify(self.model, x, self.defense, rng)?;
                self.classifier.loss_input_grad(&p, y)
            }
            OracleMode::OneShotApprox => one_shot_gradient(self.classifier, self.model, self.defense, x, y, rng),
            OracleMode::ExactUnroll => {
                // every probe replays the same purifier randomness
                let key = rng.clone();
                let f = |p: &Tensor| -> f64 {
                    let mut r = key.clone();
                    match purify(self.model, p, self.defense, &mut r) {
                        Ok((out, _)) => self.classifier.loss(&out, y),
                        Err(_) => f64::NAN,
                    }
                };
                let g = crate::finite_diff::finite_diff_grad(f, x, crate::finite_diff::DEFAULT_STEP)?;
                // advance the caller's stream past what one purification used
                purify(self.model, x, self.defense, rng)?;
                Ok(g)
            }
        }
    }
}

/// Projection onto the threat ball: clamp for ℓ∞, radial rescale for ℓ2.
pub fn project(delta: &Tensor, threat: &ThreatModel) -> Tensor {
    let eps = threat.epsilon;
    match threat.norm {
        Norm::Linf => delta.map(|v| v.clamp(-eps, eps)),
        Norm::L2 => {
            let n = delta.norm2();
            if n > eps {
                delta * (eps / n)
            } else {
                delta.clone()
            }
        }
    }
}

/// Mean of `k` gradients, replicate `i` drawing from its own substream.
/// The reduction runs in replicate order.
pub fn eot_gradient(
    oracle: &impl LossGradient,
    x: &Tensor,
    y: usize,
    k: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::Config("EOT sample count must be at least 1".into()));
    }
    let base = rng.next_u64();
    let mut acc = Tensor::zeros_like(x);
    for i in 0..k {
        let mut sub = rng.substream(base ^ mix(i as u64));
        acc.axpy(1.0, &oracle.loss_grad(x, y, &mut sub)?);
    }
    acc.scale_in_place(1.0 / k as f64);
    Ok(acc)
}

fn random_start(threat: &ThreatModel, dim: usize, rng: &mut RngStream) -> Tensor {
    match threat.norm {
        Norm::Linf => {
            let mut d = Tensor::zeros(&[dim]);
            for v in d.data_mut() {
                *v = rng.uniform(-threat.epsilon, threat.epsilon);
            }
            d
        }
        Norm::L2 => {
            let g = rng.gaussian(&[dim]);
            let r = threat.epsilon * rng.uniform(0.0, 1.0).powf(1.0 / dim as f64);
            let n = g.norm2();
            if n > 0.0 {
                &g * (r / n)
            } else {
                g
            }
        }
    }
}

/// Projected gradient ascent. ℓ∞ steps by `α·sign(g)`, ℓ2 by `α·g/‖g‖₂`.
pub fn pgd(
    oracle: &impl LossGradient,
    x: &Tensor,
    y: usize,
    threat: &ThreatModel,
    cfg: &AttackConfig,
    rng: &mut RngStream,
) -> Result<Tensor> {
    threat.validate()?;
    cfg.validate()?;
    let alpha = cfg.alpha(threat);
    let mut delta = if cfg.random_start {
        random_start(threat, x.len(), rng)
    } else {
        Tensor::zeros_like(x)
    };
    for iteration in 0..cfg.iterations {
        let point = x + &delta;
        let g = eot_gradient(oracle, &point, y, cfg.eot_samples, rng)?;
        if !g.is_finite() {
            return Err(Error::AttackAborted { iteration });
        }
        match threat.norm {
            Norm::Linf => delta.axpy(alpha, &g.map(sign)),
            Norm::L2 => {
                let n = g.norm2();
                if n > 0.0 {
                    delta.axpy(alpha / n, &g);
                }
            }
        }
        delta = project(&delta, threat);
    }
    Ok(x + &delta)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// PGD whose gradients are EOT averages of the classifier gradient at
/// stochastic purifications, passed back as if the purifier were the
/// identity.
#[allow(clippy::too_many_arguments)]
pub fn bpda_eot_attack(
    defense: &PurifierConfig,
    model: &impl ScoreModel,
    classifier: &Classifier,
    x: &Tensor,
    y: usize,
    threat: &ThreatModel,
    cfg: &AttackConfig,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let oracle = GradOracle::new(OracleMode::BpdaIdentity, classifier, model, defense);
    pgd(&oracle, x, y, threat, cfg, rng)
}

/// PGD whose gradients differentiate the one-shot denoiser exactly,
/// EOT-averaged over `(σ, ε)`.
#[allow(clippy::too_many_arguments)]
pub fn pgd_eot_oneshot(
    defense: &PurifierConfig,
    model: &impl ScoreModel,
    classifier: &Classifier,
    x: &Tensor,
    y: usize,
    threat: &ThreatModel,
    cfg: &AttackConfig,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let oracle = GradOracle::new(OracleMode::OneShotApprox, classifier, model, defense);
    pgd(&oracle, x, y, threat, cfg, rng)
}

/// Attack `x` with whatever `cfg.mode` names.
#[allow(clippy::too_many_arguments)]
pub fn run_attack(
    defense: &PurifierConfig,
    model: &impl ScoreModel,
    classifier: &Classifier,
    x: &Tensor,
    y: usize,
    threat: &ThreatModel,
    cfg: &AttackConfig,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let oracle = GradOracle::new(cfg.mode, classifier, model, defense);
    pgd(&oracle, x, y, threat, cfg, rng)
}
