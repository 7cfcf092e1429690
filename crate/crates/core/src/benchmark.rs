//! The standard toy benchmark: 8 modes on a ring in 128 dimensions, folded
//! into 4 classes, an MLP classifier, the analytic prior, and an ℓ∞ transfer
//! attack with ε = 0.3.

use crate::attack::{AttackConfig, Norm, ThreatModel};
use crate::classify::{train_classifier, Classifier, ClassifierArch, LabeledSet};
use crate::dataset::{gen_dataset, DatasetKind};
use crate::error::Result;
use crate::experiment::Experiment;
use crate::purify::PurifierConfig;
use crate::score::GmmModel;

pub const TRAIN_SIZE: usize = 2000;
pub const EVAL_SIZE: usize = 512;
pub const TRAIN_SEED: u64 = 1;
pub const EVAL_SEED: u64 = 2;
pub const CLASSIFIER_EPOCHS: usize = 300;
pub const CLASSIFIER_LR: f64 = 0.01;
pub const CLASSIFIER_SEED: u64 = 0;
pub const EPSILON: f64 = 0.3;

pub struct ToyBenchmark {
    pub kind: DatasetKind,
    pub prior: GmmModel,
    pub train: LabeledSet,
    pub eval: LabeledSet,
    pub classifier: Classifier,
}

impl ToyBenchmark {
    pub fn build() -> Result<Self> {
        let kind = DatasetKind::default();
        let prior = kind.analytic_prior()?.expect("gmm-classes has an analytic prior");
        let train = gen_dataset(&kind, TRAIN_SIZE, TRAIN_SEED)?;
        let eval = gen_dataset(&kind, EVAL_SIZE, EVAL_SEED)?;
        let classifier = train_classifier(
            ClassifierArch::Mlp { hidden: 64 },
            &train,
            CLASSIFIER_EPOCHS,
            CLASSIFIER_LR,
            CLASSIFIER_SEED,
        )?;
        Ok(Self {
            kind,
            prior,
            train,
            eval,
            classifier,
        })
    }

    pub fn threat() -> ThreatModel {
        ThreatModel {
            norm: Norm::Linf,
            epsilon: EPSILON,
        }
    }

    /// Transfer-PGD against `purifier`, over `trials` trials.
    pub fn experiment(&self, purifier: PurifierConfig, trials: usize, seed: u64) -> Experiment<&GmmModel> {
        Experiment {
            model: &self.prior,
            classifier: self.classifier.clone(),
            eval: self.eval.clone(),
            purifier,
            threat: Self::threat(),
            attack: AttackConfig::transfer_pgd(),
            trials,
            seed,
        }
    }
}
