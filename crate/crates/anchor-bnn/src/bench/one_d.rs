//! 1D interpolation/extrapolation benchmark: a sinusoid with a linear
//! trend, sampled in two disconnected input regions so the gap and the
//! right-hand extrapolation regime both get exercised.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Scaling};
use crate::error::Result;
use crate::prior::FunctionalPrior;
use crate::seed::Seed;

pub const REGION1: (f64, f64) = (-0.6, 0.1);
pub const REGION2: (f64, f64) = (0.6, 0.65);
/// Slope and offset of the generating trend `1.5 (x - 0.2)`.
pub const TREND_SLOPE: f64 = 1.5;
pub const TREND_X_OFFSET: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Benchmark1DConfig {
    pub n_region1: usize,
    pub n_region2: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for Benchmark1DConfig {
    fn default() -> Self {
        Benchmark1DConfig {
            n_region1: 25,
            n_region2: 5,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

/// Noiseless generating function `1.5 (x - 0.2) + sin(8 (x - 0.2))`.
pub fn truth(x: f64) -> f64 {
    TREND_SLOPE * (x - TREND_X_OFFSET) + (8.0 * (x - TREND_X_OFFSET)).sin()
}

/// The linear trend alone, which the benchmark priors use as their mean.
pub fn trend(x: f64) -> f64 {
    TREND_SLOPE * (x - TREND_X_OFFSET)
}

/// Sample the two-region dataset with Gaussian observation noise.
pub fn gen_1d_dataset(cfg: &Benchmark1DConfig) -> Result<Dataset> {
    let mut rng = Seed::new(cfg.seed).rng();
    let n = cfg.n_region1 + cfg.n_region2;
    let mut x = DMatrix::zeros(n, 1);
    for i in 0..cfg.n_region1 {
        x[(i, 0)] = rng.gen_range(REGION1.0..REGION1.1);
    }
    for i in 0..cfg.n_region2 {
        x[(cfg.n_region1 + i, 0)] = rng.gen_range(REGION2.0..REGION2.1);
    }
    let mut y = DMatrix::zeros(n, 1);
    for i in 0..n {
        let eps: f64 = rng.sample(StandardNormal);
        y[(i, 0)] = truth(x[(i, 0)]) + cfg.noise_std * eps;
    }
    let noise_var = DVector::from_vec(vec![cfg.noise_std * cfg.noise_std]);
    Ok(Dataset::new(x, y, noise_var)?.with_names(&["x"], &["y"]))
}

/// Benchmark GP prior with the trend as mean, expressed in the scaled
/// coordinates of `scaling`. `lengthscale` and `kernel_amp` are raw-unit.
pub fn benchmark_prior(scaling: &Scaling, kernel_amp: f64, lengthscale: f64) -> FunctionalPrior {
    FunctionalPrior {
        mean: scaling.affine_mean_to_scaled(
            TREND_SLOPE,
            -TREND_SLOPE * TREND_X_OFFSET,
            0,
            0,
        ),
        kernel_amp: scaling.kernel_amp_to_scaled(kernel_amp, 0),
        lengthscale: scaling.lengthscale_to_scaled(lengthscale, 0),
        feature_subset: vec![0],
        constraint: crate::prior::Bounds::NONE,
    }
}
