//! Function-space priors: GP means, RBF kernels over feature subsets,
//! output constraints, and measurement-set generation.
//!
//! A [`FunctionalPrior`] describes one output channel. Multi-output problems
//! use one prior per output, sampled independently. Realizations are drawn
//! at a measurement set (by default Latin-hypercube standard-normal points
//! in scaled input space) and serve as pre-training targets.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seed::Seed;

/// Mean function of a GP prior, evaluated on one input feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanKind {
    Zero,
    /// `m(x) = slope * x[feature] + intercept`.
    Affine {
        slope: f64,
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        feature: usize,
    },
    /// `m(x) = amp * u * x[feature]^3` with `u ~ U(-1, 1)` drawn once per
    /// realization.
    RandomCubic {
        amp: f64,
        #[serde(default)]
        feature: usize,
    },
}

/// Optional output bounds enforced on realizations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Bounds {
    pub const NONE: Bounds = Bounds {
        lower: None,
        upper: None,
    };

    pub fn positive() -> Bounds {
        Bounds {
            lower: Some(0.0),
            upper: None,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        let v = match self.lower {
            Some(lo) if v < lo => lo,
            _ => v,
        };
        match self.upper {
            Some(hi) if v > hi => hi,
            _ => v,
        }
    }

    pub fn is_none(&self) -> bool {
        self.lower.is_none() && self.upper.is_none()
    }
}

/// GP specification for one output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalPrior {
    pub mean: MeanKind,
    /// RBF amplitude `k0 >= 0`.
    pub kernel_amp: f64,
    /// RBF lengthscale `L > 0`.
    pub lengthscale: f64,
    /// Indices of the input features the kernel (and mean) see.
    pub feature_subset: Vec<usize>,
    #[serde(default)]
    pub constraint: Bounds,
}

impl FunctionalPrior {
    pub fn new(
        mean: MeanKind,
        kernel_amp: f64,
        lengthscale: f64,
        feature_subset: Vec<usize>,
        constraint: Bounds,
    ) -> Result<Self> {
        let prior = FunctionalPrior {
            mean,
            kernel_amp,
            lengthscale,
            feature_subset,
            constraint,
        };
        prior.validate(usize::MAX)?;
        Ok(prior)
    }

    /// 1D GP with affine mean, the common benchmark shape.
    pub fn one_d(slope: f64, intercept: f64, kernel_amp: f64, lengthscale: f64) -> Self {
        FunctionalPrior {
            mean: MeanKind::Affine {
                slope,
                intercept,
                feature: 0,
            },
            kernel_amp,
            lengthscale,
            feature_subset: vec![0],
            constraint: Bounds::NONE,
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.kernel_amp < 0.0 || !self.kernel_amp.is_finite() {
            return Err(Error::InvalidPrior(format!(
                "kernel amplitude must be >= 0, got {}",
                self.kernel_amp
            )));
        }
        if self.lengthscale <= 0.0 || !self.lengthscale.is_finite() {
            return Err(Error::InvalidPrior(format!(
                "lengthscale must be > 0, got {}",
                self.lengthscale
            )));
        }
        if self.feature_subset.is_empty() {
            return Err(Error::InvalidPrior("feature subset is empty".into()));
        }
        if let Some(&bad) = self.feature_subset.iter().find(|&&j| j >= input_dim) {
            return Err(Error::InvalidPrior(format!(
                "feature index {bad} out of range for input_dim {input_dim}"
            )));
        }
        if let (Some(lo), Some(hi)) = (self.constraint.lower, self.constraint.upper) {
            if lo > hi {
                return Err(Error::InvalidPrior(format!(
                    "constraint lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        Ok(())
    }

    /// Evaluate the RBF kernel between two input rows, restricted to the
    /// feature subset: `k0 * exp(-||x - x'||^2 / (2 L^2))`.
    pub fn rbf_kernel(&self, x: &[f64], x_other: &[f64]) -> f64 {
        let mut sq = 0.0;
        for &j in &self.feature_subset {
            let dlt = x[j] - x_other[j];
            sq += dlt * dlt;
        }
        self.kernel_amp * (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    fn mean_values(&self, points: &DMatrix<f64>, rng: &mut ChaCha12Rng) -> DVector<f64> {
        match self.mean {
            MeanKind::Zero => DVector::zeros(points.nrows()),
            MeanKind::Affine {
                slope,
                intercept,
                feature,
            } => DVector::from_fn(points.nrows(), |i, _| slope * points[(i, feature)] + intercept),
            MeanKind::RandomCubic { amp, feature } => {
                let u: f64 = rng.gen_range(-1.0..=1.0);
                DVector::from_fn(points.nrows(), |i, _| {
                    let x = points[(i, feature)];
                    amp * u * x * x * x
                })
            }
        }
    }

    /// Gram matrix of the kernel at a point set (rows = points).
    pub fn gram(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let m = points.nrows();
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            let xi: Vec<f64> = points.row(i).iter().copied().collect();
            for j in i..m {
                let xj: Vec<f64> = points.row(j).iter().copied().collect();
                let v = self.rbf_kernel(&xi, &xj);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Draw one realization `g ~ p(g)` at the given points.
    ///
    /// The Gram matrix gets a diagonal jitter of `1e-8 * k0`, doubled on
    /// Cholesky failure up to `1e-4 * k0`; dense RBF Grams at several
    /// hundred points are numerically rank-deficient without it. Output
    /// constraints are applied afterwards by [`constrain_realization`].
    pub fn sample_realization(&self, points: &DMatrix<f64>, seed: Seed) -> Result<PriorRealization> {
        self.validate(points.ncols())?;
        let mut rng = seed.rng();
        let mean = self.mean_values(points, &mut rng);
        let m = points.nrows();
        let values = if self.kernel_amp == 0.0 {
            mean
        } else {
            let gram = self.gram(points);
            let chol = self.jittered_cholesky(&gram)?;
            let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            mean + chol.l() * z
        };
        let realization = PriorRealization {
            points: points.clone(),
            values: DMatrix::from_column_slice(m, 1, values.as_slice()),
        };
        Ok(constrain_realization(realization, self.constraint))
    }

    fn jittered_cholesky(&self, gram: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let mut jitter = 1e-8 * self.kernel_amp;
        let max_jitter = 1e-4 * self.kernel_amp;
        loop {
            let mut k = gram.clone();
            for i in 0..k.nrows() {
                k[(i, i)] += jitter;
            }
            match Cholesky::new(k) {
                Some(c) => return Ok(c),
                None => {
                    jitter *= 2.0;
                    if jitter > max_jitter {
                        return Err(Error::Factorization { last_jitter: jitter });
                    }
                }
            }
        }
    }
}

/// One draw from a (possibly multi-output) functional prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorRealization {
    /// `(m, input_dim)` measurement points.
    pub points: DMatrix<f64>,
    /// `(m, output_dim)` function values at the points.
    pub values: DMatrix<f64>,
}

impl PriorRealization {
    /// Standard deviation of the realization values, pooled over outputs.
    pub fn values_std(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        (self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// Draw a joint realization for several independent per-output priors.
pub fn sample_realization_joint(
    priors: &[FunctionalPrior],
    points: &DMatrix<f64>,
    seed: Seed,
) -> Result<PriorRealization> {
    if priors.is_empty() {
        return Err(Error::InvalidPrior("no output priors given".into()));
    }
    let m = points.nrows();
    let mut values = DMatrix::zeros(m, priors.len());
    for (j, prior) in priors.iter().enumerate() {
        let r = prior.sample_realization(points, seed.derive(j as u64))?;
        values.set_column(j, &r.values.column(0));
    }
    Ok(PriorRealization {
        points: points.clone(),
        values,
    })
}

/// Clamp every value violating a bound onto the bound. Identity when no
/// bounds are declared; idempotent and monotone.
pub fn constrain_realization(mut realization: PriorRealization, bounds: Bounds) -> PriorRealization {
    if bounds.is_none() {
        return realization;
    }
    for v in realization.values.iter_mut() {
        *v = bounds.clamp(*v);
    }
    realization
}

/// Latin-hypercube sample of size `m` in `dim` dimensions, mapped through
/// the standard normal quantile function per dimension.
pub fn lhs_standard_normal(m: usize, dim: usize, seed: Seed) -> Result<DMatrix<f64>> {
    if m == 0 || dim == 0 {
        return Err(Error::Domain("LHS needs m >= 1 and dim >= 1".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut rng = seed.rng();
    let mut points = DMatrix::zeros(m, dim);
    let mut strata: Vec<usize> = (0..m).collect();
    for j in 0..dim {
        // Fisher-Yates permutation of the m probability strata.
        for i in (1..m).rev() {
            let k = rng.gen_range(0..=i);
            strata.swap(i, k);
        }
        for i in 0..m {
            let u: f64 = rng.gen_range(0.0..1.0);
            let p = (strata[i] as f64 + u) / m as f64;
            // clamp away from {0,1}; inverse_cdf is infinite there
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            points[(i, j)] = normal.inverse_cdf(p);
        }
    }
    Ok(points)
}

/// Least-squares coefficient of the no-intercept model `y ≈ theta * x`.
pub fn fit_linear_mean(feature: &[f64], y: &[f64]) -> Result<f64> {
    if feature.len() != y.len() || feature.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need >= 2 aligned points, got {} x {}",
            feature.len(),
            y.len()
        )));
    }
    let n = feature.len() as f64;
    let mean = feature.iter().sum::<f64>() / n;
    let var = feature.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-12 * (1.0 + mean * mean) {
        return Err(Error::DegenerateFit(
            "feature has zero variance over the training data".into(),
        ));
    }
    let sxy: f64 = feature.iter().zip(y).map(|(x, yy)| x * yy).sum();
    let sxx: f64 = feature.iter().map(|x| x * x).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prior_a() -> FunctionalPrior {
        FunctionalPrior::one_d(2.0, 0.0, 0.6, 0.8)
    }

    fn prior_d() -> FunctionalPrior {
        FunctionalPrior {
            mean: MeanKind::RandomCubic { amp: 5.0, feature: 0 },
            kernel_amp: 0.1,
            lengthscale: 0.2,
            feature_subset: vec![0],
            constraint: Bounds::NONE,
        }
    }

    #[test]
    fn rbf_at_zero_distance_is_amplitude() {
        let p = prior_a();
        assert_relative_eq!(p.rbf_kernel(&[0.3], &[0.3]), 0.6);
    }

    #[test]
    fn rbf_direct_formula_value() {
        // k0=0.6, L=0.8, |dx|=0.8 -> 0.6 e^{-1/2}
        let p = prior_a();
        let v = p.rbf_kernel(&[0.0], &[0.8]);
        assert_relative_eq!(v, 0.6 * (-0.5f64).exp(), max_relative = 1e-14);
        assert!((v - 0.36392).abs() < 1e-5);
    }

    #[test]
    fn rbf_six_lengthscales_is_negligible() {
        let p = prior_a();
        let v = p.rbf_kernel(&[0.0], &[6.0 * 0.8]);
        assert!(v < 1.6e-8 * 0.6);
    }

    #[test]
    fn rbf_respects_feature_subset() {
        let p = FunctionalPrior::new(MeanKind::Zero, 0.2, 0.8, vec![0, 2], Bounds::NONE).unwrap();
        // feature 1 differs wildly but is not in the subset
        let v = p.rbf_kernel(&[0.1, 99.0, -0.2], &[0.1, -99.0, -0.2]);
        assert_relative_eq!(v, 0.2);
    }

    #[test]
    fn invalid_priors_rejected() {
        assert!(FunctionalPrior::new(MeanKind::Zero, 0.5, 0.0, vec![0], Bounds::NONE).is_err());
        assert!(FunctionalPrior::new(MeanKind::Zero, -0.5, 1.0, vec![0], Bounds::NONE).is_err());
        assert!(FunctionalPrior::new(MeanKind::Zero, 0.5, 1.0, vec![], Bounds::NONE).is_err());
    }

    #[test]
    fn lhs_single_point() {
        let pts = lhs_standard_normal(1, 1, Seed::new(1)).unwrap();
        assert_eq!(pts.nrows(), 1);
        assert!(pts[(0, 0)].is_finite());
    }

    #[test]
    fn lhs_stratification_exact() {
        let m = 500;
        let pts = lhs_standard_normal(m, 1, Seed::new(2)).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut cdf: Vec<f64> = pts.column(0).iter().map(|&x| normal.cdf(x)).collect();
        cdf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (i, &p) in cdf.iter().enumerate() {
            assert!(
                p >= i as f64 / m as f64 && p < (i + 1) as f64 / m as f64,
                "stratum {i} violated: {p}"
            );
        }
    }

    #[test]
    fn lhs_mean_near_zero() {
        let pts = lhs_standard_normal(100, 4, Seed::new(3)).unwrap();
        for j in 0..4 {
            let mean = pts.column(j).sum() / 100.0;
            assert!(mean.abs() < 0.35, "dim {j} mean {mean}");
        }
    }

    #[test]
    fn zero_amplitude_returns_mean_exactly() {
        let p = FunctionalPrior::one_d(2.0, 0.0, 0.0, 0.8);
        let pts = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 0.5]);
        let r = p.sample_realization(&pts, Seed::new(4)).unwrap();
        assert_relative_eq!(r.values[(0, 0)], -2.0);
        assert_relative_eq!(r.values[(1, 0)], 0.0);
        assert_relative_eq!(r.values[(2, 0)], 1.0);
    }

    #[test]
    fn realization_moments_match_gp_at_single_point() {
        // prior A at x=0.5: mean 1.0, variance 0.6
        let p = prior_a();
        let pts = DMatrix::from_row_slice(1, 1, &[0.5]);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let r = p.sample_realization(&pts, Seed::new(50).derive(i as u64)).unwrap();
            let v = r.values[(0, 0)];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let mean_tol = 3.0 * (0.6f64 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < mean_tol, "mean {mean}");
        assert!((var - 0.6).abs() < 0.05 * 0.6, "var {var}");
    }

    #[test]
    fn prior_d_moments_at_unit_input() {
        // at x=1: mean 0, variance 25/3 + 0.1
        let p = prior_d();
        let pts = DMatrix::from_row_slice(1, 1, &[1.0]);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let r = p.sample_realization(&pts, Seed::new(60).derive(i as u64)).unwrap();
            let v = r.values[(0, 0)];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expected_var = 25.0 / 3.0 + 0.1;
        let mean_tol = 3.0 * (expected_var / n as f64).sqrt();
        assert!(mean.abs() < mean_tol, "mean {mean}");
        assert!((var - expected_var).abs() < 0.05 * expected_var, "var {var}");
    }

    #[test]
    fn shared_marginals_different_correlation_across_lengthscales() {
        // priors A/B/C share k0; only cross-point correlation differs.
        let dx: f64 = 0.3;
        let pts = DMatrix::from_row_slice(2, 1, &[0.0, dx]);
        let n = 6_000;
        for (tag, lengthscale) in [(0u64, 0.8f64), (1, 0.2), (2, 0.05)] {
            let p = FunctionalPrior::one_d(2.0, 0.0, 0.6, lengthscale);
            let (mut s0, mut s1, mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let r = p
                    .sample_realization(&pts, Seed::new(70 + tag).derive(i as u64))
                    .unwrap();
                let a = r.values[(0, 0)];
                let b = r.values[(1, 0)] - 2.0 * dx;
                s0 += a;
                s1 += b;
                s00 += a * a;
                s11 += b * b;
                s01 += a * b;
            }
            let nf = n as f64;
            let c00 = s00 / nf - (s0 / nf).powi(2);
            let c11 = s11 / nf - (s1 / nf).powi(2);
            let c01 = s01 / nf - (s0 / nf) * (s1 / nf);
            let corr = c01 / (c00 * c11).sqrt();
            let expected = (-dx * dx / (2.0 * lengthscale * lengthscale)).exp();
            // marginal variance is k0 at every point for every lengthscale
            assert!((c00 - 0.6).abs() < 0.08, "marginal var {c00}");
            assert!((c11 - 0.6).abs() < 0.08, "marginal var {c11}");
            assert!(
                (corr - expected).abs() < 0.05,
                "L={lengthscale}: corr {corr} vs {expected}"
            );
        }
    }

    #[test]
    fn constrain_clamps_to_bound() {
        let r = PriorRealization {
            points: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            values: DMatrix::from_row_slice(2, 1, &[-0.3, 0.7]),
        };
        let c = constrain_realization(r, Bounds::positive());
        assert_eq!(c.values[(0, 0)], 0.0);
        assert_eq!(c.values[(1, 0)], 0.7);
    }

    #[test]
    fn constrain_without_bounds_is_identity() {
        let r = PriorRealization {
            points: DMatrix::from_row_slice(1, 1, &[0.0]),
            values: DMatrix::from_row_slice(1, 1, &[-5.0]),
        };
        let c = constrain_realization(r.clone(), Bounds::NONE);
        assert_eq!(c, r);
    }

    #[test]
    fn fit_linear_mean_exact() {
        let x = [0.5, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_relative_eq!(fit_linear_mean(&x, &y).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn fit_linear_mean_closed_form() {
        // {(1,1),(2,1)} -> (1+2)/(1+4) = 0.6
        assert_relative_eq!(fit_linear_mean(&[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.6);
    }

    #[test]
    fn fit_linear_mean_orthogonal_design() {
        // y independent of x over a symmetric design -> theta ~ 0
        let x = [-2.0, -1.0, 1.0, 2.0];
        let y = [3.0, 3.0, 3.0, 3.0];
        assert!(fit_linear_mean(&x, &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fit_linear_mean_rejects_constant_feature() {
        assert!(matches!(
            fit_linear_mean(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn gram_positive_definite_after_jitter() {
        let p = FunctionalPrior::one_d(0.0, 0.0, 0.6, 0.05);
        let pts = lhs_standard_normal(200, 1, Seed::new(8)).unwrap();
        let gram = p.gram(&pts);
        for i in 0..gram.nrows() {
            for j in 0..i {
                assert_eq!(gram[(i, j)], gram[(j, i)]);
            }
        }
        assert!(p.jittered_cholesky(&gram).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn constrain_idempotent_and_monotone(vals in proptest::collection::vec(-2.0f64..2.0, 1..20), lo in -1.0f64..0.5) {
            let m = vals.len();
            let r = PriorRealization {
                points: DMatrix::zeros(m, 1),
                values: DMatrix::from_column_slice(m, 1, &vals),
            };
            let bounds = Bounds { lower: Some(lo), upper: None };
            let once = constrain_realization(r.clone(), bounds);
            let twice = constrain_realization(once.clone(), bounds);
            prop_assert_eq!(&once, &twice);
            for i in 0..m {
                if vals[i] >= lo {
                    prop_assert_eq!(once.values[(i, 0)], vals[i]);
                } else {
                    prop_assert_eq!(once.values[(i, 0)], lo);
                }
            }
        }

        #[test]
        fn lhs_always_stratified(m in 1usize..64, seed in 0u64..100) {
            let pts = lhs_standard_normal(m, 1, Seed::new(seed)).unwrap();
            let normal = Normal::new(0.0, 1.0).unwrap();
            let mut cdf: Vec<f64> = pts.column(0).iter().map(|&x| normal.cdf(x)).collect();
            cdf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (i, &p) in cdf.iter().enumerate() {
                prop_assert!(p >= i as f64 / m as f64 && p < (i + 1) as f64 / m as f64);
            }
        }
    }
}
