//! Shared fixtures for the criterion benchmarks.

use scoreopt_core::{DatasetKind, GmmModel, RngStream, ScoreModel, Tensor};

/// The toy-benchmark prior and one noised point near a mode.
pub fn toy_prior_and_point(sigma: f64) -> (GmmModel, Tensor) {
    let prior = DatasetKind::default()
        .analytic_prior()
        .expect("default dataset is valid")
        .expect("gmm prior");
    let mut rng = RngStream::new(0, 0);
    let (mut x, _) = prior.sample(&mut rng);
    x.axpy(sigma, &rng.gaussian(&[prior.dim()]));
    (prior, x)
}
