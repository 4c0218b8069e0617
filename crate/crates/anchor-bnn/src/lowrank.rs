//! Low-rank (degenerate) multivariate Gaussian over flat parameter vectors.
//!
//! The prior extracted from K pre-trained ensemble members has covariance
//! `Sigma0 = W0^T W0 / (K-1)` where `W0` stacks the centered members row by
//! row. Since `K << d`, everything is carried in factored form `(mu0, V, S)`
//! with `Sigma0 = V S^2 V^T / (K-1)`: density evaluation, gradients and
//! sampling all cost `O(d r)` instead of `O(d^2)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::Seed;

/// Relative singular-value cutoff: directions with `s <= tol * s_max` are
/// dropped. The quadratic form divides by `s^2`, so near-null directions
/// must be truncated rather than inverted.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-8;

/// Thin SVD of a `(k, d)` matrix, returning the `min(k, d)` singular
/// values (descending) and right singular vectors `V (d, min(k, d))`.
///
/// Computed as a Householder QR of the transpose followed by an SVD of the
/// small `min(k,d) x k` factor, which keeps `V` orthonormal to machine
/// precision for any conditioning; the intended regime is `k << d`.
pub fn thin_svd_rows(w: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (k, d) = (w.nrows(), w.ncols());
    let p = k.min(d);
    let qr = w.transpose().qr();
    let q = qr.q(); // (d, p) orthonormal
    let r = qr.r(); // (p, k)
    // W = R^T Q^T, so an SVD of R^T (k, p) gives W = U S (Q V_r)^T.
    let svd = r.transpose().svd(false, true);
    let v_small = svd.v_t.expect("SVD with V requested").transpose(); // (p, p)
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let s = DVector::from_fn(p, |i, _| svd.singular_values[order[i]]);
    let mut v_sorted = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.set_column(dst, &v_small.column(src));
    }
    (s, q * v_sorted)
}

/// Degenerate Gaussian `N(mu0, V S^2 V^T / (K-1))` in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankGaussian {
    mean: DVector<f64>,
    /// `(d, r)` orthonormal columns.
    right_vectors: DMatrix<f64>,
    /// Length `r`, strictly positive, descending.
    singular_values: DVector<f64>,
    ensemble_size: usize,
}

impl LowRankGaussian {
    /// Fit the degenerate Gaussian to `K >= 2` sample vectors: sample mean,
    /// thin SVD of the centered stack, truncation of near-null directions.
    pub fn from_samples(samples: &[DVector<f64>], truncation_tol: f64) -> Result<Self> {
        let k = samples.len();
        if k < 2 {
            return Err(Error::InsufficientEnsemble { required: 2, got: k });
        }
        let d = samples[0].len();
        if let Some(bad) = samples.iter().map(|s| s.len()).find(|&l| l != d) {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: bad,
            });
        }
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += s;
        }
        mean /= k as f64;
        let mut centered = DMatrix::zeros(k, d);
        for (i, s) in samples.iter().enumerate() {
            let row = s - &mean;
            centered.row_mut(i).copy_from(&row.transpose());
        }
        let (s_all, v_all) = thin_svd_rows(&centered);
        let s_max = s_all.iter().fold(0.0f64, |a, &b| a.max(b));
        // Cancellation noise of the centering step caps meaningful singular
        // values from below; identical samples must come out rank zero.
        let sample_scale = samples
            .iter()
            .map(|s| s.amax())
            .fold(0.0f64, f64::max);
        let floor = 1e-13 * sample_scale * (d as f64).sqrt();
        let r = s_all
            .iter()
            .take_while(|&&s| s > truncation_tol * s_max && s > floor)
            .count();
        Ok(LowRankGaussian {
            mean,
            right_vectors: v_all.columns(0, r).into_owned(),
            singular_values: s_all.rows(0, r).into_owned(),
            ensemble_size: k,
        })
    }

    pub fn from_parts(
        mean: DVector<f64>,
        right_vectors: DMatrix<f64>,
        singular_values: DVector<f64>,
        ensemble_size: usize,
    ) -> Result<Self> {
        if right_vectors.ncols() != singular_values.len() || right_vectors.nrows() != mean.len() {
            return Err(Error::ShapeMismatch {
                expected: mean.len() * singular_values.len(),
                got: right_vectors.len(),
            });
        }
        if ensemble_size < 2 {
            return Err(Error::InsufficientEnsemble {
                required: 2,
                got: ensemble_size,
            });
        }
        if singular_values.iter().any(|&s| s <= 0.0) {
            return Err(Error::Domain("singular values must be positive".into()));
        }
        Ok(LowRankGaussian {
            mean,
            right_vectors,
            singular_values,
            ensemble_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Retained rank `r <= K-1`.
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right_vectors
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// Log density up to its (degenerate) normalization constant:
    /// `-(K-1)/2 * ||S^{-1} V^T (w - mu0)||^2`. Zero along directions
    /// orthogonal to `span(V)`.
    pub fn log_density(&self, w: &DVector<f64>) -> f64 {
        let diff = w - &self.mean;
        let proj = self.right_vectors.tr_mul(&diff);
        let mut q = 0.0;
        for i in 0..self.rank() {
            let t = proj[i] / self.singular_values[i];
            q += t * t;
        }
        -0.5 * (self.ensemble_size as f64 - 1.0) * q
    }

    /// Quadratic regularizer `(K-1) ||S^{-1} V^T diff||^2` and its gradient
    /// `2 (K-1) V S^{-2} V^T diff` with respect to `diff`.
    pub fn quadratic_and_grad(&self, diff: &DVector<f64>) -> (f64, DVector<f64>) {
        let km1 = self.ensemble_size as f64 - 1.0;
        let proj = self.right_vectors.tr_mul(diff);
        let mut value = 0.0;
        let mut scaled = DVector::zeros(self.rank());
        for i in 0..self.rank() {
            let s2 = self.singular_values[i] * self.singular_values[i];
            value += proj[i] * proj[i] / s2;
            scaled[i] = proj[i] / s2;
        }
        let grad = 2.0 * km1 * (&self.right_vectors * scaled);
        (km1 * value, grad)
    }

    /// Draw `w = V S z / sqrt(K-1) + mu0`, `z ~ N(0, I_r)`.
    pub fn sample(&self, seed: Seed) -> DVector<f64> {
        let mut rng = seed.rng();
        let z = DVector::from_fn(self.rank(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.sample_with_z(&z)
    }

    /// Deterministic transform of a given latent vector.
    pub fn sample_with_z(&self, z: &DVector<f64>) -> DVector<f64> {
        let km1 = (self.ensemble_size as f64 - 1.0).max(1.0);
        let scaled =
            DVector::from_fn(self.rank(), |i, _| self.singular_values[i] * z[i] / km1.sqrt());
        &self.right_vectors * scaled + &self.mean
    }

    /// Dense covariance `V S^2 V^T / (K-1)`. Only sensible for small `d`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let km1 = self.ensemble_size as f64 - 1.0;
        let vs = scale_columns(&self.right_vectors, &self.singular_values);
        (&vs * vs.transpose()) / km1
    }

    /// Dense generalized inverse `(K-1) V S^{-2} V^T`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let km1 = self.ensemble_size as f64 - 1.0;
        let inv_s = DVector::from_fn(self.rank(), |i, _| 1.0 / self.singular_values[i]);
        let vs = scale_columns(&self.right_vectors, &inv_s);
        (&vs * vs.transpose()) * km1
    }
}

fn scale_columns(m: &DMatrix<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    out
}
