//! Shared fixtures for the benchmarks.

use masg_core::problems::make_cycle_quadratic;
use masg_core::{GradientOracle, NoiseInjector, Result};

/// Cycle quadratic with `lambda = 0.01` and additive Gaussian noise.
pub fn noisy_cycle(dim: usize, sigma2: f64) -> Result<GradientOracle> {
    make_cycle_quadratic(dim, 0.01, 2024)?.with_noise(NoiseInjector::AdditiveGaussian { sigma2 }, 11)
}

/// Profiles swept by the certificate benchmarks.
pub const PROFILES: [(f64, f64); 5] = [(0.01, 1.0), (0.1, 1.0), (1.0, 1.0), (1.0, 10.0), (1.0, 100.0)];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_builds() {
        let q = noisy_cycle(10, 1e-2).unwrap();
        assert_eq!(q.dim(), 10);
        assert_eq!(q.noise().sigma2, Some(1e-2));
    }
}
