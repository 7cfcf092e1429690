//! Isotropic Gaussian mixtures: the analytic prior.
//!
//! Convolving `Σ w_k N(μ_k, v_k I)` with `N(0, σ² I)` gives another mixture
//! with variances `v_k + σ²`, so the noised log-density, its score, and its
//! Hessian are all closed form. The Hessian is symmetric, which makes the
//! vector–Jacobian product a Hessian–vector product.

use serde::{Deserialize, Serialize};

use super::{Linearization, NoiseLevel, ScoreModel};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{diff_dot, sq_dist, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Tensor>,
    variances: Vec<f64>,
    log_weights: Vec<f64>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl TryFrom<GmmRepr> for GmmModel {
    type Error = Error;
    fn try_from(r: GmmRepr) -> Result<Self> {
        let means = r
            .means
            .into_iter()
            .map(|m| {
                if m.is_empty() {
                    Err(Error::Contract("empty mixture mean".into()))
                } else {
                    Ok(Tensor::from_vec(m))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        GmmModel::new(r.weights, means, r.variances)
    }
}

impl From<GmmModel> for GmmRepr {
    fn from(m: GmmModel) -> Self {
        GmmRepr {
            weights: m.weights,
            means: m.means.into_iter().map(Tensor::into_vec).collect(),
            variances: m.variances,
        }
    }
}

/// Per-point quantities shared by the score and its Hessian.
struct Eval {
    /// responsibilities at the noised level
    resp: Vec<f64>,
    inv_var: Vec<f64>,
    log_density: f64,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Tensor>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Contract(format!(
                "mixture needs matching, nonempty parameter lists (weights {k}, means {}, variances {})",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Contract("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Contract("mixture variances must be positive".into()));
        }
        let dim = means[0].len();
        for m in &means {
            if m.shape() != [dim] || !m.is_finite() {
                return Err(Error::Contract("mixture means must be finite vectors of one dimension".into()));
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            means,
            variances,
            log_weights,
            dim,
        })
    }

    /// Equal-weight mixture with one shared variance.
    pub fn isotropic(means: Vec<Tensor>, variance: f64) -> Result<Self> {
        let k = means.len();
        Self::new(vec![1.0 / k as f64; k], means, vec![variance; k])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Tensor] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn eval(&self, x: &Tensor, sigma: f64) -> Eval {
        let k = self.components();
        let d = self.dim as f64;
        let s2 = sigma * sigma;
        let mut logits = Vec::with_capacity(k);
        let mut inv_var = Vec::with_capacity(k);
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut log_norm = (f64::NAN, 0.0);
        for c in 0..k {
            let var = self.variances[c] + s2;
            let iv = 1.0 / var;
            if var != log_norm.0 {
                log_norm = (var, d * (half_log_2pi + 0.5 * var.ln()));
            }
            let sq = sq_dist(x.data(), self.means[c].data());
            inv_var.push(iv);
            logits.push(self.log_weights[c] - 0.5 * sq * iv - log_norm.1);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = resp.iter().sum();
        for r in &mut resp {
            *r /= z;
        }
        Eval {
            resp,
            inv_var,
            log_density: max + z.ln(),
        }
    }

    /// `log Σ_k w_k N(x; μ_k, (v_k + σ²) I)` with log-sum-exp.
    pub fn noised_logdensity(&self, x: &Tensor, sigma: NoiseLevel) -> f64 {
        self.eval(x, sigma.sigma()).log_density
    }

    /// Posterior component probabilities given `x` observed at noise σ.
    pub fn responsibilities(&self, x: &Tensor, sigma: f64) -> Vec<f64> {
        self.eval(x, sigma).resp
    }

    pub fn sample(&self, rng: &mut RngStream) -> (Tensor, usize) {
        let u = rng.uniform(0.0, 1.0);
        let mut acc = 0.0;
        let mut comp = self.components() - 1;
        for (c, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = c;
                break;
            }
        }
        (self.sample_component(comp, rng), comp)
    }

    pub fn sample_component(&self, comp: usize, rng: &mut RngStream) -> Tensor {
        let mut x = rng.gaussian(&[self.dim]);
        x.scale_in_place(self.variances[comp].sqrt());
        x.axpy(1.0, &self.means[comp]);
        x
    }

    /// `Σ_k r_k g_k` with `g_k = (μ_k − x)/(v_k + σ²)`, accumulated as
    /// `Σ_k a_k μ_k − (Σ_k a_k) x` with `a_k = r_k/(v_k + σ²)`.
    fn weighted_score(&self, x: &Tensor, e: &Eval) -> Tensor {
        let mut s = Tensor::zeros(&[self.dim]);
        let mut total = 0.0;
        for (c, &r) in e.resp.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let a = r * e.inv_var[c];
            total += a;
            s.axpy(a, &self.means[c]);
        }
        s.axpy(-total, x);
        s
    }
}

impl ScoreModel for GmmModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &Tensor, sigma: NoiseLevel) -> Tensor {
        let e = self.eval(x, sigma.sigma());
        self.weighted_score(x, &e)
    }

    fn linearize(&self, x: &Tensor, sigma: NoiseLevel) -> Linearization<'_> {
        let e = self.eval(x, sigma.sigma());
        let score = self.weighted_score(x, &e);
        let mean_score = score.clone();
        let x = x.clone();
        Linearization::new(score, move |v: &Tensor| {
            // H v = Σ r_k (g_k (g_k·v) − v/s_k) − s (s·v), g_k rebuilt from the means
            let mut out = Tensor::zeros(&[self.dim]);
            let (mut on_x, mut on_v) = (0.0, 0.0);
            for (c, &r) in e.resp.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let iv = e.inv_var[c];
                let a = r * iv * iv * diff_dot(self.means[c].data(), x.data(), v.data());
                out.axpy(a, &self.means[c]);
                on_x += a;
                on_v += r * iv;
            }
            out.axpy(-on_x, &x);
            out.axpy(-on_v, v);
            out.axpy(-mean_score.dot(v), &mean_score);
            out
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_diff::{finite_diff_grad, finite_diff_vjp, relative_error};

    fn unit_gaussian(d: usize) -> GmmModel {
        GmmModel::isotropic(vec![Tensor::zeros(&[d])], 1.0).unwrap()
    }

    fn sigma(s: f64) -> NoiseLevel {
        NoiseLevel::new(s).unwrap()
    }

    fn three_component() -> GmmModel {
        GmmModel::new(
            vec![0.2, 0.5, 0.3],
            vec![
                Tensor::from_vec(vec![1.0, 0.0, -0.5]),
                Tensor::from_vec(vec![-1.0, 0.5, 0.0]),
                Tensor::from_vec(vec![0.0, -1.0, 1.0]),
            ],
            vec![0.3, 0.5, 0.2],
        )
        .unwrap()
    }

    #[test]
    fn closed_form_log_density() {
        let m = unit_gaussian(1);
        let v = m.noised_logdensity(&Tensor::zeros(&[1]), sigma(1.0));
        assert!((v + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert!((v + 1.2655).abs() < 1e-4);
    }

    #[test]
    fn matches_quadrature_of_the_convolution() {
        // 1-D, two components; integrate p(u)·N(x − u; 0, σ²) on a fine grid
        let m = GmmModel::new(
            vec![0.3, 0.7],
            vec![Tensor::from_vec(vec![-1.0]), Tensor::from_vec(vec![1.5])],
            vec![0.2, 0.6],
        )
        .unwrap();
        let s = 0.45;
        let normal = |z: f64, var: f64| (-0.5 * z * z / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        for x in [-2.3, -0.4, 0.0, 0.9, 3.1] {
            let (lo, hi, n) = (-12.0, 12.0, 48_000);
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let u = lo + i as f64 * h;
                let prior = 0.3 * normal(u + 1.0, 0.2) + 0.7 * normal(u - 1.5, 0.6);
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                acc += w * prior * normal(x - u, s * s);
            }
            let quad = (acc * h).ln();
            let exact = m.noised_logdensity(&Tensor::from_vec(vec![x]), sigma(s));
            assert!((quad - exact).abs() < 1e-6, "x={x}: {quad} vs {exact}");
        }
    }

    #[test]
    fn translation_equivariance() {
        let m = three_component();
        let shift = Tensor::from_vec(vec![0.7, -2.0, 3.5]);
        let moved = GmmModel::new(
            m.weights().to_vec(),
            m.means().iter().map(|mu| mu + &shift).collect(),
            m.variances().to_vec(),
        )
        .unwrap();
        let x = Tensor::from_vec(vec![0.1, 0.2, -0.3]);
        let a = m.noised_logdensity(&x, sigma(0.4));
        let b = moved.noised_logdensity(&(&x + &shift), sigma(0.4));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gaussian_score_denoise_and_jacobian() {
        let m = unit_gaussian(2);
        let x = Tensor::from_vec(vec![2.0, 0.0]);
        let s = m.score(&x, sigma(1.0));
        assert!((s[0] + 1.0).abs() < 1e-15 && s[1].abs() < 1e-15);
        let d = m.denoise(&x, sigma(1.0));
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1].abs() < 1e-15);
        let v = Tensor::from_vec(vec![0.3, -1.7]);
        let j = m.score_vjp(&Tensor::from_vec(vec![-4.0, 9.0]), sigma(1.0), &v);
        assert!(relative_error(&j, &(&v * -0.5), 1e-12) < 1e-14);
        assert_eq!(m.score(&Tensor::zeros(&[2]), sigma(0.3)), Tensor::zeros(&[2]));
    }

    #[test]
    fn vanishing_noise_denoiser_is_identity() {
        let m = three_component();
        let x = Tensor::from_vec(vec![0.9, 0.1, -0.4]);
        let d = m.denoise(&x, sigma(1e-6));
        assert!((&d - &x).norm_inf() < 1e-9);
    }

    #[test]
    fn far_components_denoise_to_the_near_mean() {
        let m = GmmModel::isotropic(
            vec![Tensor::from_vec(vec![0.0, 0.0]), Tensor::from_vec(vec![20.0, 0.0])],
            0.01,
        )
        .unwrap();
        let x_t = Tensor::from_vec(vec![0.05, -0.02]);
        assert!(m.responsibilities(&x_t, 0.01)[0] > 1.0 - 1e-12);
        let d = m.denoise(&Tensor::from_vec(vec![0.0005, 0.0]), sigma(0.01));
        assert!((&d - &m.means()[0]).norm_inf() < 1e-3);
    }

    #[test]
    fn score_and_vjp_match_finite_differences() {
        let m = three_component();
        let mut rng = RngStream::new(5, 0);
        for _ in 0..20 {
            let x = rng.gaussian(&[3]);
            let s = sigma(rng.uniform(0.1, 1.0));
            let fd = finite_diff_grad(|p| m.noised_logdensity(p, s), &x, 1e-5).unwrap();
            assert!(relative_error(&m.score(&x, s), &fd, 1e-6) < 1e-5);
            let v = rng.gaussian(&[3]);
            let fd = finite_diff_vjp(|p| m.score(p, s), &x, &v, 1e-5).unwrap();
            assert!(relative_error(&m.score_vjp(&x, s, &v), &fd, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        let mu = || vec![Tensor::zeros(&[2]), Tensor::zeros(&[2])];
        assert!(GmmModel::new(vec![0.5, 0.6], mu(), vec![1.0, 1.0]).is_err());
        assert!(GmmModel::new(vec![0.5, 0.5], mu(), vec![1.0, 0.0]).is_err());
        assert!(GmmModel::new(vec![0.5, 0.5], mu(), vec![1.0]).is_err());
        assert!(GmmModel::new(vec![], vec![], vec![]).is_err());
    }
}
