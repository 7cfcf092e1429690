//! Test-time purifiers.
//!
//! * ScoreOpt-O optimises the clean-space iterate directly, resampling
//!   `(σ, ε1, ε2)` every step.
//! * ScoreOpt-N noises the iterate once per outer round, takes `N` gradient
//!   steps on the noisy variable and then one-shot denoises it.
//! * The multi-step baseline diffuses to σ* and walks a geometric σ-grid
//!   back down with ancestral variance-exploding updates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_eval, loss_eval_at_noisy, LossKind, LossSample};
use crate::optim::{OptimizerKind, Stepper};
use crate::rng::RngStream;
use crate::score::{NoiseLevel, ScoreModel};
use crate::tensor::Tensor;

/// Smallest σ on the baseline's grid.
pub const BASELINE_SIGMA_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRange {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl NoiseRange {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let r = Self { sigma_min, sigma_max };
        r.validate()?;
        Ok(r)
    }

    pub fn fixed(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "noise range must satisfy 0 < σ_min ≤ σ_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )))
        }
    }

    pub fn is_fixed(&self) -> bool {
        self.sigma_min == self.sigma_max
    }
}

/// σ uniform on the range. A degenerate range consumes no randomness.
pub fn sample_noise_level(range: &NoiseRange, rng: &mut RngStream) -> Result<NoiseLevel> {
    range.validate()?;
    if range.is_fixed() {
        return NoiseLevel::new(range.sigma_min);
    }
    NoiseLevel::new(rng.uniform(range.sigma_min, range.sigma_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ClipBox {
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Err(Error::Config(format!("clip box must have {dim} bounds per side")));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Config("clip box lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &mut Tensor) {
        x.clamp_box(&self.lo, &self.hi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PurifierKind {
    /// No defense.
    Identity,
    /// `denoise(x + σε, σ)`.
    OneShot,
    ScoreOptO,
    #[default]
    ScoreOptN,
    /// Ancestral multi-step baseline; `steps` is the grid length.
    MultiStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurifierConfig {
    pub method: PurifierKind,
    pub loss: LossKind,
    pub lr: f64,
    /// Outer steps M (grid length for the multi-step baseline).
    pub steps: usize,
    /// Inner steps N, ScoreOpt-N only.
    pub inner_steps: usize,
    pub noise: NoiseRange,
    pub optimizer: OptimizerKind,
    pub clip: Option<ClipBox>,
    pub seed: u64,
    /// Keep a snapshot of the iterate after every step.
    pub record_iterates: bool,
}

impl Default for PurifierConfig {
    fn default() -> Self {
        Self {
            method: PurifierKind::ScoreOptN,
            loss: LossKind::Sr { lambda_reg: 1.0 },
            lr: 0.1,
            steps: 5,
            inner_steps: 1,
            noise: NoiseRange {
                sigma_min: 0.25,
                sigma_max: 0.25,
            },
            optimizer: OptimizerKind::Adam,
            clip: None,
            seed: 0,
            record_iterates: false,
        }
    }
}

impl PurifierConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.noise.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.method == PurifierKind::MultiStep && self.steps == 0 {
            return Err(Error::Config("multi-step baseline needs at least one step".into()));
        }
        Ok(())
    }

    pub fn one_shot(sigma: f64) -> Self {
        Self {
            method: PurifierKind::OneShot,
            steps: 1,
            inner_steps: 0,
            noise: NoiseRange {
                sigma_min: sigma,
                sigma_max: sigma,
            },
            ..Self::default()
        }
    }

    pub fn identity() -> Self {
        Self {
            method: PurifierKind::Identity,
            ..Self::default()
        }
    }

    pub fn multi_step(sigma: f64, steps: usize) -> Self {
        Self {
            method: PurifierKind::MultiStep,
            steps,
            noise: NoiseRange {
                sigma_min: sigma,
                sigma_max: sigma,
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PurifyTrace {
    pub losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterates: Option<Vec<Tensor>>,
    pub forwards: u64,
    pub vjps: u64,
    /// seconds
    pub wall_time: f64,
}

impl PurifyTrace {
    fn new(record: bool) -> Self {
        Self {
            iterates: record.then(Vec::new),
            ..Self::default()
        }
    }

    fn snapshot(&mut self, x: &Tensor) {
        if let Some(it) = &mut self.iterates {
            it.push(x.clone());
        }
    }
}

fn check_start(model: &impl ScoreModel, x_a: &Tensor, cfg: &PurifierConfig) -> Result<()> {
    cfg.validate()?;
    model.check_input(x_a)?;
    if !x_a.is_finite() {
        return Err(Error::Contract("input to purify is not finite".into()));
    }
    if let Some(b) = &cfg.clip {
        b.validate(x_a.len())?;
    }
    Ok(())
}

/// Optimise the clean-space iterate, starting from `x_a`.
pub fn score_opt_o(
    model: &impl ScoreModel,
    x_a: &Tensor,
    cfg: &PurifierConfig,
    rng: &mut RngStream,
) -> Result<(Tensor, PurifyTrace)> {
    check_start(model, x_a, cfg)?;
    let start = Instant::now();
    let mut trace = PurifyTrace::new(cfg.record_iterates);
    let mut x = x_a.clone();
    let mut stepper = Stepper::new(cfg.optimizer, x.shape());
    for step in 0..cfg.steps {
        let sigma = sample_noise_level(&cfg.noise, rng)?;
        let s = LossSample::draw(sigma, x.len(), rng);
        let e = loss_eval(cfg.loss, model, &x, x_a, &s);
        trace.forwards += e.forwards;
        trace.vjps += e.vjps;
        trace.losses.push(e.value);
        stepper.step(&mut x, &e.grad, cfg.lr)?;
        if let Some(b) = &cfg.clip {
            b.apply(&mut x);
        }
        if !x.is_finite() {
            return Err(Error::PurificationDiverged { step });
        }
        trace.snapshot(&x);
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((x, trace))
}

/// Optimise the noisy iterate for `N` steps, then one-shot denoise; repeat
/// `M` times. ε1 is drawn once per outer round, ε2 once per inner step, and
/// the optimiser state restarts every round.
pub fn score_opt_n(
    model: &impl ScoreModel,
    x_a: &Tensor,
    cfg: &PurifierConfig,
    rng: &mut RngStream,
) -> Result<(Tensor, PurifyTrace)> {
    check_start(model, x_a, cfg)?;
    let start = Instant::now();
    let mut trace = PurifyTrace::new(cfg.record_iterates);
    let d = x_a.len();
    let mut x = x_a.clone();
    for step in 0..cfg.steps {
        let sigma = sample_noise_level(&cfg.noise, rng)?;
        let mut s = LossSample {
            sigma,
            eps1: rng.gaussian(&[d]),
            eps2: Tensor::zeros(&[d]),
        };
        let mut x_t = x.clone();
        x_t.axpy(sigma.sigma(), &s.eps1);
        let mut stepper = Stepper::new(cfg.optimizer, &[d]);
        for _ in 0..cfg.inner_steps {
            s.eps2 = rng.gaussian(&[d]);
            let e = loss_eval_at_noisy(cfg.loss, model, &x_t, &s.eps1, x_a, &s);
            trace.forwards += e.forwards;
            trace.vjps += e.vjps;
            trace.losses.push(e.value);
            stepper.step(&mut x_t, &e.grad, cfg.lr)?;
        }
        x = model.denoise(&x_t, sigma);
        trace.forwards += 1;
        if let Some(b) = &cfg.clip {
            b.apply(&mut x);
        }
        if !x.is_finite() {
            return Err(Error::PurificationDiverged { step });
        }
        trace.snapshot(&x);
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((x, trace))
}

/// Geometric grid of `steps` levels from `sigma_star` down to
/// `min(floor, sigma_star)`.
pub fn baseline_grid(sigma_star: f64, steps: usize, floor: f64) -> Vec<f64> {
    let lo = floor.min(sigma_star);
    if steps == 1 {
        return vec![sigma_star];
    }
    let ratio = (lo / sigma_star).ln() / (steps - 1) as f64;
    (0..steps)
        .map(|k| {
            if k == steps - 1 {
                lo
            } else {
                sigma_star * (ratio * k as f64).exp()
            }
        })
        .collect()
}

pub fn multi_step_purify(
    model: &impl ScoreModel,
    x_a: &Tensor,
    sigma_star: NoiseLevel,
    steps: usize,
    rng: &mut RngStream,
) -> Result<(Tensor, PurifyTrace)> {
    multi_step_purify_with_floor(model, x_a, sigma_star, steps, BASELINE_SIGMA_FLOOR, rng)
}

pub fn multi_step_purify_with_floor(
    model: &impl ScoreModel,
    x_a: &Tensor,
    sigma_star: NoiseLevel,
    steps: usize,
    floor: f64,
    rng: &mut RngStream,
) -> Result<(Tensor, PurifyTrace)> {
    if steps == 0 {
        return Err(Error::Config("multi-step baseline needs at least one step".into()));
    }
    if !(floor > 0.0) {
        return Err(Error::Config(format!("σ floor must be positive, got {floor}")));
    }
    model.check_input(x_a)?;
    let start = Instant::now();
    let mut trace = PurifyTrace::default();
    let grid = baseline_grid(sigma_star.sigma(), steps, floor);
    let d = x_a.len();
    let mut x = x_a.clone();
    x.axpy(sigma_star.sigma(), &rng.gaussian(&[d]));
    for k in 0..steps - 1 {
        let (s, sn) = (grid[k], grid[k + 1]);
        let den = model.denoise(&x, NoiseLevel::new(s)?);
        trace.forwards += 1;
        let keep = 1.0 - sn * sn / (s * s);
        let mut next = x.clone();
        next.axpy(keep, &(&den - &x));
        let std = (sn * sn * (s * s - sn * sn) / (s * s)).max(0.0).sqrt();
        next.axpy(std, &rng.gaussian(&[d]));
        if !next.is_finite() {
            return Err(Error::PurificationDiverged { step: k });
        }
        x = next;
    }
    x = model.denoise(&x, NoiseLevel::new(grid[steps - 1])?);
    trace.forwards += 1;
    if !x.is_finite() {
        return Err(Error::PurificationDiverged { step: steps - 1 });
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((x, trace))
}

/// Run whichever purifier `cfg.method` names.
pub fn purify(
    model: &impl ScoreModel,
    x_a: &Tensor,
    cfg: &PurifierConfig,
    rng: &mut RngStream,
) -> Result<(Tensor, PurifyTrace)> {
    match cfg.method {
        PurifierKind::Identity => {
            model.check_input(x_a)?;
            Ok((x_a.clone(), PurifyTrace::default()))
        }
        PurifierKind::OneShot => {
            let one = PurifierConfig {
                steps: 1,
                inner_steps: 0,
                ..cfg.clone()
            };
            score_opt_n(model, x_a, &one, rng)
        }
        PurifierKind::ScoreOptO => score_opt_o(model, x_a, cfg, rng),
        PurifierKind::ScoreOptN => score_opt_n(model, x_a, cfg, rng),
        PurifierKind::MultiStep => {
            cfg.validate()?;
            let sigma = sample_noise_level(&cfg.noise, rng)?;
            let (mut x, trace) = multi_step_purify(model, x_a, sigma, cfg.steps, rng)?;
            if let Some(b) = &cfg.clip {
                b.validate(x.len())?;
                b.apply(&mut x);
            }
            Ok((x, trace))
        }
    }
}
