//! Synthetic labelled datasets and their CSV form (`x1..xd,label`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::score::GmmModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetKind {
    /// `modes` isotropic Gaussians on a circle in the first two coordinates
    /// (a line when `dim = 1`), mode `k` labelled `k mod classes`.
    /// `separation` is the distance between adjacent means in units of `std`.
    GmmClasses {
        modes: usize,
        classes: usize,
        separation: f64,
        dim: usize,
        #[serde(default = "default_std")]
        std: f64,
    },
    TwoMoons { noise: f64 },
    /// Concentric circles of radius `1..=classes`.
    Rings { classes: usize, noise: f64 },
}

fn default_std() -> f64 {
    0.2
}

impl Default for DatasetKind {
    /// The standard toy benchmark.
    fn default() -> Self {
        DatasetKind::GmmClasses {
            modes: 8,
            classes: 4,
            separation: 12.0,
            dim: 128,
            std: 0.2,
        }
    }
}

impl DatasetKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DatasetKind::GmmClasses {
                modes,
                classes,
                separation,
                dim,
                std,
            } => {
                classes >= 2
                    && modes >= classes
                    && dim >= 1
                    && separation > 0.0
                    && separation.is_finite()
                    && std > 0.0
                    && std.is_finite()
                    && (dim >= 2 || modes >= 1)
            }
            DatasetKind::TwoMoons { noise } => noise > 0.0 && noise.is_finite(),
            DatasetKind::Rings { classes, noise } => classes >= 2 && noise > 0.0 && noise.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dataset parameters: {self:?}")))
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            DatasetKind::GmmClasses { classes, .. } | DatasetKind::Rings { classes, .. } => classes,
            DatasetKind::TwoMoons { .. } => 2,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            DatasetKind::GmmClasses { dim, .. } => dim,
            _ => 2,
        }
    }

    /// The exact generating density, when it is a Gaussian mixture.
    pub fn analytic_prior(&self) -> Result<Option<GmmModel>> {
        self.validate()?;
        match *self {
            DatasetKind::GmmClasses {
                modes,
                separation,
                dim,
                std,
                ..
            } => Ok(Some(GmmModel::isotropic(mode_means(modes, separation * std, dim), std * std)?)),
            _ => Ok(None),
        }
    }

    /// Mode indices that carry each class label.
    fn class_modes(modes: usize, classes: usize, class: usize) -> Vec<usize> {
        (0..modes).filter(|k| k % classes == class).collect()
    }
}

fn mode_means(modes: usize, spacing: f64, dim: usize) -> Vec<Tensor> {
    (0..modes)
        .map(|k| {
            let mut m = Tensor::zeros(&[dim]);
            if dim == 1 {
                m[0] = spacing * (k as f64 - (modes - 1) as f64 / 2.0);
            } else if modes == 1 {
                // single mode at the origin
            } else {
                let radius = spacing / (2.0 * (std::f64::consts::PI / modes as f64).sin());
                let a = k as f64 * std::f64::consts::TAU / modes as f64;
                m[0] = radius * a.cos();
                m[1] = radius * a.sin();
            }
            m
        })
        .collect()
}

/// Sample `i` gets class `i mod C`, so classes are balanced within one sample.
pub fn gen_dataset(kind: &DatasetKind, n: usize, seed: u64) -> Result<LabeledSet> {
    kind.validate()?;
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed, 0xda7a);
    let classes = kind.classes();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let prior = kind.analytic_prior()?;
    for i in 0..n {
        let y = i % classes;
        let x = match (kind, &prior) {
            (DatasetKind::GmmClasses { modes, .. }, Some(gmm)) => {
                let owned = DatasetKind::class_modes(*modes, classes, y);
                let k = owned[rng.index(owned.len())];
                gmm.sample_component(k, &mut rng)
            }
            (DatasetKind::TwoMoons { noise }, _) => {
                let t = rng.uniform(0.0, std::f64::consts::PI);
                let (a, b) = if y == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                Tensor::from_vec(vec![a + noise * rng.normal(), b + noise * rng.normal()])
            }
            (DatasetKind::Rings { noise, .. }, _) => {
                let t = rng.uniform(0.0, std::f64::consts::TAU);
                let r = (y + 1) as f64;
                Tensor::from_vec(vec![r * t.cos() + noise * rng.normal(), r * t.sin() + noise * rng.normal()])
            }
            _ => unreachable!("gmm-classes always has a prior"),
        };
        points.push(x);
        labels.push(y);
    }
    LabeledSet::new(points, labels, classes)
}

/// Bayes-optimal label under a labelled mixture: the class whose modes
/// carry the most posterior mass. Ties go to the lowest class.
pub fn bayes_label(prior: &GmmModel, classes: usize, x: &Tensor) -> usize {
    let resp = prior.responsibilities(x, 0.0);
    let mut mass = vec![0.0; classes];
    for (k, r) in resp.iter().enumerate() {
        mass[k % classes] += r;
    }
    crate::classify::argmax(&mass)
}

pub fn write_dataset(path: &Path, set: &LabeledSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let d = set.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (x, y) in set.points.iter().zip(&set.labels) {
        let mut row: Vec<String> = x.data().iter().map(|v| format!("{v:?}")).collect();
        row.push(y.to_string());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `x1..xd,label`. The class count is `max label + 1` (at least 2).
pub fn read_dataset(path: &Path) -> Result<LabeledSet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=d).map(|i| format!("x{i}")).chain(["label".to_string()]).collect();
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::format(path, "header must be x1,...,xd,label"));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: {what}", row + 1));
        let mut x = Vec::with_capacity(d);
        for field in rec.iter().take(d) {
            let v: f64 = field.trim().parse().map_err(|_| bad(&format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(bad("non-finite coordinate"));
            }
            x.push(v);
        }
        let y: usize = rec[d].trim().parse().map_err(|_| bad("label must be a nonnegative integer"))?;
        points.push(Tensor::from_vec(x));
        labels.push(y);
    }
    if points.is_empty() {
        return Err(Error::format(path, "dataset has no rows"));
    }
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    LabeledSet::new(points, labels, classes)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!()
    }
    Error::format(path, e)
}
