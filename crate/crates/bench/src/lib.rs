//! Fixtures shared by the benchmarks.

use deh_core::data::{generate_regression, Dataset};
use deh_core::rng::Sampler;

/// A random sphere vector of dimension `n + 2` with a well-conditioned
/// radius term.
pub fn random_sphere(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Sampler::new(seed);
    let mut s = rng.gaussian_vec(n + 2);
    s[n] = 1.0;
    s
}

pub fn regression_data(samples: usize) -> Dataset {
    generate_regression(samples, 7).expect("generation succeeds")
}
