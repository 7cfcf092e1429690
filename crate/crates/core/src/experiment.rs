//! Evaluation protocol: attack each point, purify the clean and attacked
//! versions with the same randomness, classify both, and aggregate over
//! trials.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackConfig, ThreatModel};
use crate::classify::{Classifier, LabeledSet};
use crate::dataset::{gen_dataset, read_dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model_io::{load_classifier, load_score_model};
use crate::purify::{purify, NoiseRange, PurifierConfig, PurifierKind};
use crate::rng::{mix, RngStream};
use crate::score::{AnyScoreModel, ScoreModel};
use crate::tensor::Tensor;

/// Where the evaluation points come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    File { path: PathBuf },
    Generated { kind: DatasetKind, seed: u64 },
}

impl DatasetSource {
    /// At most `n` points.
    pub fn load(&self, n: usize) -> Result<LabeledSet> {
        match self {
            DatasetSource::File { path } => Ok(read_dataset(path)?.head(n)),
            DatasetSource::Generated { kind, seed } => gen_dataset(kind, n, *seed),
        }
    }
}

/// On-disk experiment description (TOML). Relative paths resolve against
/// the spec file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub score_model: PathBuf,
    pub classifier: PathBuf,
    #[serde(default)]
    pub purifier: PurifierConfig,
    #[serde(default)]
    pub threat: ThreatModel,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_eval_size() -> usize {
    512
}

fn default_trials() -> usize {
    5
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: Self = toml::from_str(&text).map_err(|e| Error::format(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut spec.score_model);
        resolve(&mut spec.classifier);
        if let DatasetSource::File { path } = &mut spec.dataset {
            resolve(path);
        }
        Ok(spec)
    }
}

/// An experiment with every artifact in memory.
#[derive(Debug, Clone)]
pub struct Experiment<M> {
    pub model: M,
    pub classifier: Classifier,
    pub eval: LabeledSet,
    pub purifier: PurifierConfig,
    pub threat: ThreatModel,
    pub attack: AttackConfig,
    pub trials: usize,
    pub seed: u64,
}

impl Experiment<AnyScoreModel> {
    pub fn load(spec: &ExperimentSpec) -> Result<Self> {
        for p in [&spec.score_model, &spec.classifier] {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        let model = load_score_model(&spec.score_model)?;
        let classifier = load_classifier(&spec.classifier)?;
        let eval = spec.dataset.load(spec.eval_size)?;
        Ok(Self {
            model,
            classifier,
            eval,
            purifier: spec.purifier.clone(),
            threat: spec.threat,
            attack: spec.attack.clone(),
            trials: spec.trials,
            seed: spec.seed,
        })
    }
}

/// Aggregated outcome of one configuration. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub label: String,
    pub axis: Option<String>,
    pub value: Option<f64>,
    pub standard_accuracy: f64,
    pub standard_std: f64,
    pub robust_accuracy: f64,
    pub robust_std: f64,
    /// Seconds per purification.
    pub wall_time_per_sample: f64,
    pub forwards_per_sample: f64,
    pub vjps_per_sample: f64,
    pub trials: usize,
    pub samples: usize,
}

impl ResultRecord {
    pub const COLUMNS: [&'static str; 12] = [
        "label",
        "axis",
        "value",
        "standard_accuracy",
        "standard_std",
        "robust_accuracy",
        "robust_std",
        "wall_time_per_sample",
        "forwards_per_sample",
        "vjps_per_sample",
        "trials",
        "samples",
    ];

    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |r: &Self| Self {
            wall_time_per_sample: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

impl fmt::Display for ResultRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: standard {:.2} ± {:.2}, robust {:.2} ± {:.2}, {:.1} forwards/sample, {:.3e} s/sample",
            self.label,
            self.standard_accuracy,
            self.standard_std,
            self.robust_accuracy,
            self.robust_std,
            self.forwards_per_sample,
            self.wall_time_per_sample
        )
    }
}

struct SampleOutcome {
    clean_correct: bool,
    robust_correct: bool,
    forwards: u64,
    vjps: u64,
    seconds: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn label_of(cfg: &PurifierConfig) -> String {
    match cfg.method {
        PurifierKind::Identity => "identity".into(),
        PurifierKind::OneShot => "one-shot".into(),
        PurifierKind::ScoreOptO => format!("score-opt-o/{}", cfg.loss.name()),
        PurifierKind::ScoreOptN => format!("score-opt-n/{}", cfg.loss.name()),
        PurifierKind::MultiStep => "multi-step".into(),
    }
}

impl<M: ScoreModel> Experiment<M> {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.eval.is_empty() {
            return Err(Error::Config("evaluation set is empty".into()));
        }
        if self.eval.dim() != self.model.dim() || self.eval.dim() != self.classifier.dim() {
            return Err(Error::Config(format!(
                "dimension mismatch: data {}, score model {}, classifier {}",
                self.eval.dim(),
                self.model.dim(),
                self.classifier.dim()
            )));
        }
        self.purifier.validate()?;
        self.threat.validate()?;
        self.attack.validate()
    }

    /// Stream owning all randomness of sample `i` in trial `t`.
    fn sample_stream(&self, trial: usize, i: usize) -> RngStream {
        RngStream::new(self.seed, mix(trial as u64 ^ mix(i as u64)))
    }

    /// The attacked version of sample `i` in trial `t`.
    pub fn adversarial(&self, purifier: &PurifierConfig, trial: usize, i: usize) -> Result<Tensor> {
        let x = &self.eval.points[i];
        if self.attack.iterations == 0 {
            return Ok(x.clone());
        }
        let mut rng = self.sample_stream(trial, i).substream(1 ^ mix(self.attack.seed));
        run_attack(
            purifier,
            &self.model,
            &self.classifier,
            x,
            self.eval.labels[i],
            &self.threat,
            &self.attack,
            &mut rng,
        )
    }

    /// Purifier randomness of sample `i` in trial `t`, shared by its clean
    /// and attacked versions.
    pub fn purifier_stream(&self, purifier: &PurifierConfig, trial: usize, i: usize) -> RngStream {
        self.sample_stream(trial, i).substream(2 ^ mix(purifier.seed))
    }

    fn eval_sample(&self, purifier: &PurifierConfig, trial: usize, i: usize) -> Result<SampleOutcome> {
        let x = &self.eval.points[i];
        let y = self.eval.labels[i];
        let x_adv = self.adversarial(purifier, trial, i)?;
        let start = Instant::now();
        let (pc, tc) = purify(&self.model, x, purifier, &mut self.purifier_stream(purifier, trial, i))?;
        let (pa, ta) = purify(&self.model, &x_adv, purifier, &mut self.purifier_stream(purifier, trial, i))?;
        let seconds = start.elapsed().as_secs_f64() / 2.0;
        Ok(SampleOutcome {
            clean_correct: self.classifier.predict(&pc) == y,
            robust_correct: self.classifier.predict(&pa) == y,
            forwards: tc.forwards + ta.forwards,
            vjps: tc.vjps + ta.vjps,
            seconds,
        })
    }

    pub fn run(&self) -> Result<ResultRecord> {
        self.run_with(&self.purifier)
    }

    /// Evaluate with a different purifier, keeping every seed.
    pub fn run_with(&self, purifier: &PurifierConfig) -> Result<ResultRecord> {
        self.validate()?;
        purifier.validate()?;
        let n = self.eval.len();
        let mut standard = Vec::with_capacity(self.trials);
        let mut robust = Vec::with_capacity(self.trials);
        let (mut forwards, mut vjps, mut seconds) = (0u64, 0u64, 0.0);
        for trial in 0..self.trials {
            let outcomes: Vec<Result<SampleOutcome>> = (0..n)
                .into_par_iter()
                .map(|i| self.eval_sample(purifier, trial, i).map_err(|e| e.at_sample(i)))
                .collect();
            let mut clean_hits = 0usize;
            let mut robust_hits = 0usize;
            for o in outcomes {
                let o = o?;
                clean_hits += o.clean_correct as usize;
                robust_hits += o.robust_correct as usize;
                forwards += o.forwards;
                vjps += o.vjps;
                seconds += o.seconds;
            }
            standard.push(100.0 * clean_hits as f64 / n as f64);
            robust.push(100.0 * robust_hits as f64 / n as f64);
            tracing::info!(trial, standard = standard[trial], robust = robust[trial], "trial done");
        }
        let (standard_accuracy, standard_std) = mean_std(&standard);
        let (robust_accuracy, robust_std) = mean_std(&robust);
        let purifications = (2 * n * self.trials) as f64;
        Ok(ResultRecord {
            label: label_of(purifier),
            axis: None,
            value: None,
            standard_accuracy,
            standard_std,
            robust_accuracy,
            robust_std,
            wall_time_per_sample: 2.0 * seconds / purifications,
            forwards_per_sample: forwards as f64 / purifications,
            vjps_per_sample: vjps as f64 / purifications,
            trials: self.trials,
            samples: n,
        })
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultRecord> {
    Experiment::load(spec)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Outer steps M.
    Steps,
    /// Inner steps N.
    InnerSteps,
    /// MSE weight λ.
    Lambda,
    /// SR weight λ_reg.
    LambdaReg,
    /// Fixed noise level σ.
    Noise,
    LearningRate,
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "steps" | "m" => SweepAxis::Steps,
            "inner-steps" | "n" => SweepAxis::InnerSteps,
            "lambda" => SweepAxis::Lambda,
            "lambda-reg" => SweepAxis::LambdaReg,
            "noise" | "sigma" => SweepAxis::Noise,
            "lr" => SweepAxis::LearningRate,
            _ => {
                return Err(Error::Config(format!(
                    "unknown sweep axis {s:?} (expected steps, inner-steps, lambda, lambda-reg, noise or lr)"
                )))
            }
        })
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Steps => "steps",
            SweepAxis::InnerSteps => "inner-steps",
            SweepAxis::Lambda => "lambda",
            SweepAxis::LambdaReg => "lambda-reg",
            SweepAxis::Noise => "noise",
            SweepAxis::LearningRate => "lr",
        })
    }
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{axis} must be a nonnegative integer, got {v}")))
    }
}

/// Copy of `cfg` with one axis set to `value`.
pub fn apply_axis(cfg: &PurifierConfig, axis: SweepAxis, value: f64) -> Result<PurifierConfig> {
    let mut out = cfg.clone();
    match axis {
        SweepAxis::Steps => out.steps = as_count(axis, value)?,
        SweepAxis::InnerSteps => out.inner_steps = as_count(axis, value)?,
        SweepAxis::Lambda => match &mut out.loss {
            LossKind::Mse { lambda } => *lambda = value,
            other => return Err(Error::Config(format!("axis lambda needs the mse loss, not {}", other.name()))),
        },
        SweepAxis::LambdaReg => match &mut out.loss {
            LossKind::Sr { lambda_reg } => *lambda_reg = value,
            other => return Err(Error::Config(format!("axis lambda-reg needs the sr loss, not {}", other.name()))),
        },
        SweepAxis::Noise => out.noise = NoiseRange::fixed(value)?,
        SweepAxis::LearningRate => out.lr = value,
    }
    out.validate()?;
    Ok(out)
}

/// One record per value; every value sees the same per-sample seeds.
pub fn sweep<M: ScoreModel>(exp: &Experiment<M>, axis: SweepAxis, values: &[f64]) -> Result<Vec<ResultRecord>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| apply_axis(&exp.purifier, axis, v))
        .collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(&configs)
        .map(|(&v, cfg)| {
            let mut r = exp.run_with(cfg)?;
            r.axis = Some(axis.to_string());
            r.value = Some(v);
            tracing::info!(%axis, value = v, robust = r.robust_accuracy, "sweep point");
            Ok(r)
        })
        .collect()
}

/// Timing and accuracy of one purifier at one step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub steps: usize,
    pub seconds_per_sample: f64,
    pub seconds_per_step: f64,
    pub forwards_per_sample: f64,
    pub vjps_per_sample: f64,
    pub robust_accuracy: f64,
}

impl BenchRow {
    pub const COLUMNS: [&'static str; 7] = [
        "method",
        "steps",
        "seconds_per_sample",
        "seconds_per_step",
        "forwards_per_sample",
        "vjps_per_sample",
        "robust_accuracy",
    ];
}

/// Timing passes per configuration; the fastest is reported.
pub const BENCH_PASSES: usize = 3;

/// For each grid point, purify every attacked point (first trial) with
/// ScoreOpt-N and with the multi-step baseline, single-threaded.
pub fn bench_inference<M: ScoreModel>(exp: &Experiment<M>, grid: &[usize]) -> Result<Vec<BenchRow>> {
    exp.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("step grid is empty".into()));
    }
    if grid.contains(&0) {
        return Err(Error::Config("step grid entries must be at least 1".into()));
    }
    let n = exp.eval.len();
    let adversarial = (0..n)
        .map(|i| exp.adversarial(&exp.purifier, 0, i).map_err(|e| e.at_sample(i)))
        .collect::<Result<Vec<_>>>()?;
    let sigma = exp.purifier.noise.sigma_max;
    let mut rows = Vec::new();
    for &steps in grid {
        let ours = PurifierConfig {
            method: PurifierKind::ScoreOptN,
            steps,
            ..exp.purifier.clone()
        };
        let baseline = PurifierConfig {
            method: PurifierKind::MultiStep,
            steps,
            noise: NoiseRange::fixed(sigma)?,
            ..exp.purifier.clone()
        };
        for cfg in [&ours, &baseline] {
            let (mut fw, mut vj, mut hits) = (0u64, 0u64, 0usize);
            let mut best = f64::INFINITY;
            for pass in 0..BENCH_PASSES {
                let mut secs = 0.0;
                for (i, x_adv) in adversarial.iter().enumerate() {
                    let mut rng = exp.purifier_stream(cfg, 0, i);
                    let start = Instant::now();
                    let (p, t) = purify(&exp.model, x_adv, cfg, &mut rng).map_err(|e| e.at_sample(i))?;
                    secs += start.elapsed().as_secs_f64();
                    if pass == 0 {
                        fw += t.forwards;
                        vj += t.vjps;
                        hits += (exp.classifier.predict(&p) == exp.eval.labels[i]) as usize;
                    }
                }
                best = best.min(secs);
            }
            let per = best / n as f64;
            rows.push(BenchRow {
                method: label_of(cfg),
                steps,
                seconds_per_sample: per,
                seconds_per_step: per / steps as f64,
                forwards_per_sample: fw as f64 / n as f64,
                vjps_per_sample: vj as f64 / n as f64,
                robust_accuracy: 100.0 * hits as f64 / n as f64,
            });
        }
    }
    Ok(rows)
}
