//! Central-difference gradient oracle, used to check every analytic
//! gradient in the crate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Component `i` is `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let mut grad = Tensor::zeros_like(x);
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::OracleFailure { component: i });
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Jacobian-transpose-vector product `vᵀ J` of a vector field, by central
/// differences of `x ↦ v·f(x)`.
pub fn finite_diff_vjp(
    f: impl Fn(&Tensor) -> Tensor,
    x: &Tensor,
    v: &Tensor,
    h: f64,
) -> Result<Tensor> {
    finite_diff_grad(|p| f(p).dot(v), x, h)
}

/// Largest componentwise error relative to the larger of the two magnitudes
/// (floored at `floor` so near-zero gradients compare absolutely).
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let scale = a.norm_inf().max(b.norm_inf()).max(floor);
    (a - b).norm_inf() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|x| x.norm_sq(), &Tensor::from_vec(vec![3.0, 0.0]), 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert!(g[1].abs() < 1e-6);
    }

    #[test]
    fn constant() {
        let g = finite_diff_grad(|_| 4.2, &Tensor::from_vec(vec![1.0, 2.0, 3.0]), 1e-5).unwrap();
        assert_eq!(g, Tensor::zeros(&[3]));
    }

    #[test]
    fn bilinear() {
        let g = finite_diff_grad(|x| x[0] * x[1], &Tensor::from_vec(vec![2.0, 5.0]), 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_value_fails() {
        let err = finite_diff_grad(
            |x| if x[1] > 0.0 { f64::NAN } else { 0.0 },
            &Tensor::from_vec(vec![0.0, 0.0]),
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::OracleFailure { component: 1 }));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_diff_grad(|x| x.sum(), &Tensor::zeros(&[1]), 0.0).is_err());
    }
}
