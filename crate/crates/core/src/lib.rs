//! Test-time adversarial purification with score-based priors.
//!
//! An attacked input is pulled back toward the data manifold by optimising a
//! denoising objective under a score model, then classified. The crate holds
//! the priors (an analytic Gaussian mixture and a small trainable score
//! network), the Diff/MSE/SR objectives, the ScoreOpt-O/-N purifiers and a
//! multi-step diffusion baseline, PGD-family attacks including BPDA and EOT,
//! small classifiers, and the evaluation harness.
//!
//! ```
//! use scoreopt_core::{GmmModel, NoiseLevel, ScoreModel, Tensor};
//!
//! let prior = GmmModel::isotropic(vec![Tensor::zeros(&[2])], 1.0).unwrap();
//! let x_t = Tensor::from_vec(vec![2.0, 0.0]);
//! let clean = prior.denoise(&x_t, NoiseLevel::new(1.0).unwrap());
//! assert_eq!(clean.data(), &[1.0, 0.0]);
//! ```

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod benchmark;
pub mod classify;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod finite_diff;
pub mod losses;
pub mod model_io;
pub mod nn;
pub mod optim;
pub mod purify;
pub mod records;
pub mod rng;
pub mod score;
pub mod tensor;

pub use attack::{
    bpda_eot_attack, eot_gradient, pgd, pgd_eot_oneshot, project, run_attack, AttackConfig, GradOracle,
    LossGradient, Norm, OracleMode, ThreatModel,
};
pub use classify::{softmax, train_classifier, Classifier, ClassifierArch, LabeledSet};
pub use dataset::{gen_dataset, read_dataset, write_dataset, DatasetKind};
pub use error::{Error, Result};
pub use experiment::{
    bench_inference, run_experiment, sweep, BenchRow, DatasetSource, Experiment, ExperimentSpec, ResultRecord,
    SweepAxis,
};
pub use finite_diff::finite_diff_grad;
pub use losses::{diff_loss, loss_grad, loss_grad_at_noisy, mse_loss, sr_loss, LossKind, LossSample};
pub use model_io::{load_classifier, load_model, load_score_model, save_model, ModelFile, StoredModel, TrainingRecord};
pub use optim::{adam_step, AdamState, OptimizerKind};
pub use purify::{
    multi_step_purify, purify, sample_noise_level, score_opt_n, score_opt_o, ClipBox, NoiseRange, PurifierConfig,
    PurifierKind, PurifyTrace,
};
pub use records::{emit_bench, emit_results, load_bench, load_results, ResultFormat};
pub use rng::RngStream;
pub use score::{
    train_dsm, AnyScoreModel, DsmTrainConfig, GmmModel, MlpScoreNet, NoiseLevel, ScoreModel, SigmaFeatures,
};
pub use tensor::Tensor;
