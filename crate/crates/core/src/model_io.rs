//! Model files: pretty-printed JSON holding an architecture descriptor, every
//! parameter in shortest round-trip decimal, and how the model was made.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, ClassifierArch, LabeledSet};
use crate::dataset::DatasetKind;
use crate::error::{Error, Result};
use crate::score::{AnyScoreModel, DsmTrainConfig, GmmModel, MlpScoreNet};

pub const MODEL_FORMAT: &str = "scoreopt-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StoredModel {
    Gmm(GmmModel),
    MlpScore(MlpScoreNet),
    Classifier(Classifier),
}

impl StoredModel {
    pub fn kind(&self) -> &'static str {
        match self {
            StoredModel::Gmm(_) => "gmm",
            StoredModel::MlpScore(_) => "mlp-score",
            StoredModel::Classifier(_) => "classifier",
        }
    }
}

impl From<AnyScoreModel> for StoredModel {
    fn from(m: AnyScoreModel) -> Self {
        match m {
            AnyScoreModel::Gmm(g) => StoredModel::Gmm(g),
            AnyScoreModel::MlpScore(n) => StoredModel::MlpScore(n),
        }
    }
}

/// How a stored model was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum TrainingRecord {
    Analytic {
        dataset: DatasetKind,
    },
    Dsm {
        config: DsmTrainConfig,
        hidden: Vec<usize>,
        data_fingerprint: String,
    },
    Classifier {
        arch: ClassifierArch,
        epochs: usize,
        lr: f64,
        seed: u64,
        data_fingerprint: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: StoredModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingRecord>,
}

impl ModelFile {
    pub fn new(model: StoredModel, training: Option<TrainingRecord>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model,
            training,
        }
    }
}

/// FNV-1a over the bit patterns of every coordinate and label.
pub fn data_fingerprint(set: &LabeledSet) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (x, &y) in set.points.iter().zip(&set.labels) {
        for v in x.data() {
            feed(v.to_bits());
        }
        feed(y as u64);
    }
    format!("{h:016x}")
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::format(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported model format {:?} version {}", file.format, file.version),
        ));
    }
    Ok(file)
}

pub fn load_score_model(path: &Path) -> Result<AnyScoreModel> {
    match load_model(path)?.model {
        StoredModel::Gmm(g) => Ok(AnyScoreModel::Gmm(g)),
        StoredModel::MlpScore(n) => Ok(AnyScoreModel::MlpScore(n)),
        other => Err(Error::format(path, format!("expected a score model, found {}", other.kind()))),
    }
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    match load_model(path)?.model {
        StoredModel::Classifier(c) => Ok(c),
        other => Err(Error::format(path, format!("expected a classifier, found {}", other.kind()))),
    }
}
