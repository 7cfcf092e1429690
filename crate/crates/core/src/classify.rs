//! Softmax-linear and one-hidden-layer tanh classifiers trained with
//! cross-entropy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads};
use crate::optim::AdamState;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifierArch {
    Linear,
    Mlp { hidden: usize },
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch::Mlp { hidden: 64 }
    }
}

/// `linear`, `mlp` (64 hidden units) or `mlp:<hidden>`.
impl FromStr for ClassifierArch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "linear" => Ok(ClassifierArch::Linear),
            None if s == "mlp" => Ok(ClassifierArch::default()),
            Some(("mlp", h)) => match h.parse::<usize>() {
                Ok(hidden) if hidden > 0 => Ok(ClassifierArch::Mlp { hidden }),
                _ => Err(Error::Config(format!("invalid hidden width in {s:?}"))),
            },
            _ => Err(Error::Config(format!(
                "unknown classifier architecture {s:?} (expected linear, mlp or mlp:<hidden>)"
            ))),
        }
    }
}

impl fmt::Display for ClassifierArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierArch::Linear => write!(f, "linear"),
            ClassifierArch::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub points: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn new(points: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let set = Self { points, labels, classes };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(Error::Contract(format!(
                "{} points but {} labels",
                self.points.len(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::Contract(format!("label {bad} outside [0, {})", self.classes)));
        }
        if let Some(first) = self.points.first() {
            let d = first.len();
            if let Some(p) = self.points.iter().find(|p| p.shape() != [d]) {
                return Err(Error::ShapeMismatch {
                    expected: vec![d],
                    actual: p.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map(Tensor::len).unwrap_or(0)
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> LabeledSet {
        let n = n.min(self.len());
        LabeledSet {
            points: self.points[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassifierRepr", into = "ClassifierRepr")]
pub struct Classifier {
    arch: ClassifierArch,
    net: Mlp,
}

#[derive(Serialize, Deserialize)]
struct ClassifierRepr {
    arch: ClassifierArch,
    activation: String,
    widths: Vec<usize>,
    net: Mlp,
}

impl TryFrom<ClassifierRepr> for Classifier {
    type Error = Error;
    fn try_from(r: ClassifierRepr) -> Result<Self> {
        if r.activation != "tanh" {
            return Err(Error::Contract(format!("unsupported activation {:?}", r.activation)));
        }
        let clf = Classifier::from_parts(r.arch, r.net)?;
        if clf.net.widths() != r.widths {
            return Err(Error::Contract("declared widths do not match the layers".into()));
        }
        Ok(clf)
    }
}

impl From<Classifier> for ClassifierRepr {
    fn from(c: Classifier) -> Self {
        ClassifierRepr {
            arch: c.arch,
            activation: "tanh".into(),
            widths: c.net.widths(),
            net: c.net,
        }
    }
}

impl Classifier {
    pub fn init(arch: ClassifierArch, dim: usize, classes: usize, rng: &mut RngStream) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let widths = match arch {
            ClassifierArch::Linear => vec![dim, classes],
            ClassifierArch::Mlp { hidden } => vec![dim, hidden, classes],
        };
        Self::from_parts(arch, Mlp::init(&widths, rng)?)
    }

    pub fn from_parts(arch: ClassifierArch, net: Mlp) -> Result<Self> {
        net.validate()?;
        let ok = match arch {
            ClassifierArch::Linear => net.layers.len() == 1,
            ClassifierArch::Mlp { hidden } => net.layers.len() == 2 && net.layers[0].fan_out() == hidden,
        };
        if !ok || net.output_dim() < 2 {
            return Err(Error::Contract(format!(
                "layer widths {:?} do not match architecture {arch}",
                net.widths()
            )));
        }
        Ok(Self { arch, net })
    }

    pub fn arch(&self) -> ClassifierArch {
        self.arch
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.dim()] {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &Tensor) -> Vec<f64> {
        self.net.forward(x.data())
    }

    pub fn probabilities(&self, x: &Tensor) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &Tensor) -> usize {
        argmax(&self.logits(x))
    }

    /// Cross-entropy `−log softmax(f(x))_y`.
    pub fn loss(&self, x: &Tensor, y: usize) -> f64 {
        let l = self.logits(x);
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lse - l[y]
    }

    /// Cross-entropy and its gradient with respect to the input.
    pub fn loss_and_input_grad(&self, x: &Tensor, y: usize) -> Result<(f64, Tensor)> {
        self.check(x)?;
        if y >= self.classes() {
            return Err(Error::Contract(format!("label {y} outside [0, {})", self.classes())));
        }
        let cache = self.net.forward_cached(x.data());
        let (loss, g) = ce_backward(cache.output(), y);
        Ok((loss, Tensor::from_vec(self.net.backward(&cache, &g, None))))
    }

    pub fn loss_input_grad(&self, x: &Tensor, y: usize) -> Result<Tensor> {
        self.loss_and_input_grad(x, y).map(|(_, g)| g)
    }

    /// Fraction of correctly classified points, in percent.
    pub fn accuracy(&self, set: &LabeledSet) -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        let hits = set
            .points
            .iter()
            .zip(&set.labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        100.0 * hits as f64 / set.len() as f64
    }
}

/// Loss and `∂loss/∂logits = softmax − onehot(y)`.
fn ce_backward(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -p[y].max(f64::MIN_POSITIVE).ln();
    p[y] -= 1.0;
    (loss, p)
}

/// Full-batch Adam on mean cross-entropy. Deterministic per seed.
pub fn train_classifier(
    arch: ClassifierArch,
    data: &LabeledSet,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Classifier> {
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let mut clf = Classifier::init(arch, data.dim(), data.classes, &mut RngStream::new(seed, 0xc1f))?;
    let mut states: Vec<AdamState> = clf.net.params_mut().map(|p| AdamState::new(p.shape())).collect();
    let inv_n = 1.0 / data.len() as f64;
    for epoch in 0..epochs {
        let mut grads = MlpGrads::zeros_like(&clf.net);
        let mut loss = 0.0;
        for (x, &y) in data.points.iter().zip(&data.labels) {
            let cache = clf.net.forward_cached(x.data());
            let (l, g) = ce_backward(cache.output(), y);
            loss += l;
            clf.net.backward(&cache, &g, Some(&mut grads));
        }
        loss *= inv_n;
        grads.scale(inv_n);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::TrainingDiverged { iteration: epoch, loss });
        }
        for ((p, g), st) in clf.net.params_mut().zip(grads.params()).zip(&mut states) {
            st.update(p, g, lr)?;
        }
        if epoch % 50 == 0 {
            tracing::debug!(epoch, loss, "classifier");
        }
    }
    Ok(clf)
}
