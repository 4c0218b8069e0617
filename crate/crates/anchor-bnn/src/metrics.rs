//! Evaluation suite: RMSE, expected log-pointwise predictive density, and
//! interval-coverage calibration with miscalibration area.
//!
//! RMSE keeps the sum (not the mean) under the radical. Calibration uses
//! total (epistemic + aleatory) variance and per-output Gaussian intervals;
//! ELPPD mixes member densities under the known noise model.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Per-output RMSE: `sqrt(sum_i (y_i - mean_i)^2)`.
pub fn rmse_per_output(pred_mean: &DMatrix<f64>, y_true: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_aligned(pred_mean, y_true)?;
    Ok((0..y_true.ncols())
        .map(|j| {
            (0..y_true.nrows())
                .map(|i| (y_true[(i, j)] - pred_mean[(i, j)]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Pooled RMSE over all outputs: `sqrt(sum_ij (y_ij - mean_ij)^2)`.
pub fn rmse_pooled(pred_mean: &DMatrix<f64>, y_true: &DMatrix<f64>) -> Result<f64> {
    check_aligned(pred_mean, y_true)?;
    Ok(rmse_per_output(pred_mean, y_true)?
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt())
}

/// Expected log-pointwise predictive density of the member mixture:
/// `sum_i log( (1/K) sum_k N(y_i; f_k(x_i), Sigma_noise) )`, stabilized
/// with log-sum-exp.
pub fn elppd(
    member_outputs: &[DMatrix<f64>],
    y_true: &DMatrix<f64>,
    noise_var: &DVector<f64>,
) -> Result<f64> {
    if member_outputs.is_empty() {
        return Err(Error::Evaluation("no member outputs retained".into()));
    }
    for m in member_outputs {
        check_aligned(m, y_true)?;
    }
    if noise_var.len() != y_true.ncols() {
        return Err(Error::ShapeMismatch {
            expected: y_true.ncols(),
            got: noise_var.len(),
        });
    }
    let k = member_outputs.len();
    let log_norm: f64 = noise_var
        .iter()
        .map(|&v| -0.5 * (2.0 * std::f64::consts::PI * v).ln())
        .sum();
    let mut total = 0.0;
    let mut terms = vec![0.0f64; k];
    for i in 0..y_true.nrows() {
        for (t, m) in terms.iter_mut().zip(member_outputs) {
            let mut quad = 0.0;
            for j in 0..y_true.ncols() {
                let r = y_true[(i, j)] - m[(i, j)];
                quad += r * r / noise_var[j];
            }
            *t = log_norm - 0.5 * quad;
        }
        total += log_sum_exp(&terms) - (k as f64).ln();
    }
    Ok(total)
}

/// ELPPD restricted to a single output column (1-D member densities).
pub fn elppd_per_output(
    member_outputs: &[DMatrix<f64>],
    y_true: &DMatrix<f64>,
    noise_var: &DVector<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(y_true.ncols());
    for j in 0..y_true.ncols() {
        let cols: Vec<DMatrix<f64>> = member_outputs
            .iter()
            .map(|m| m.column(j).into_owned().reshape_generic(
                nalgebra::Dyn(m.nrows()),
                nalgebra::Dyn(1),
            ))
            .collect();
        let yj = y_true.column(j).into_owned().reshape_generic(
            nalgebra::Dyn(y_true.nrows()),
            nalgebra::Dyn(1),
        );
        out.push(elppd(&cols, &yj, &DVector::from_vec(vec![noise_var[j]]))?);
    }
    Ok(out)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// Interval-coverage calibration curve for one output.
#[derive(Debug, Clone)]
pub struct CalibrationCurve {
    /// Expected coverage levels, including the forced endpoints 0 and 1.
    pub expected: Vec<f64>,
    /// Observed coverage at each expected level.
    pub observed: Vec<f64>,
    /// Trapezoidal integral of `|observed - expected|` over `[0, 1]`.
    pub area: f64,
    /// Set when fewer than 10 test points back the curve.
    pub unreliable: bool,
}

/// Default levels grid: p = 0.01, 0.02, ..., 0.99.
pub fn default_levels() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// Coverage calibration of scalar Gaussian intervals: at each level `p`,
/// the fraction of points with `|y - mean| <= z_{(1+p)/2} * sigma` is
/// compared against `p`. Endpoints (0,0) and (1,1) are appended before the
/// trapezoid rule.
pub fn calibration_curve(
    pred_mean: &[f64],
    total_var: &[f64],
    y_true: &[f64],
    levels: &[f64],
) -> Result<CalibrationCurve> {
    let n = y_true.len();
    if pred_mean.len() != n || total_var.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: pred_mean.len().min(total_var.len()),
        });
    }
    if n == 0 {
        return Err(Error::Evaluation("calibration needs at least one point".into()));
    }
    if levels.iter().any(|&p| !(0.0..1.0).contains(&p) || p == 0.0) {
        return Err(Error::Evaluation("levels must lie in (0, 1)".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut expected = Vec::with_capacity(levels.len() + 2);
    let mut observed = Vec::with_capacity(levels.len() + 2);
    expected.push(0.0);
    observed.push(0.0);
    for &p in levels {
        let z = normal.inverse_cdf(0.5 * (1.0 + p));
        let covered = (0..n)
            .filter(|&i| {
                let sigma = total_var[i].max(0.0).sqrt();
                (y_true[i] - pred_mean[i]).abs() <= z * sigma
            })
            .count();
        expected.push(p);
        observed.push(covered as f64 / n as f64);
    }
    expected.push(1.0);
    observed.push(1.0);
    let mut area = 0.0;
    for w in 0..expected.len() - 1 {
        let dx = expected[w + 1] - expected[w];
        let fa = (observed[w] - expected[w]).abs();
        let fb = (observed[w + 1] - expected[w + 1]).abs();
        area += 0.5 * (fa + fb) * dx;
    }
    Ok(CalibrationCurve {
        expected,
        observed,
        area,
        unreliable: n < 10,
    })
}

fn check_aligned(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch {
            expected: b.nrows() * b.ncols(),
            got: a.nrows() * a.ncols(),
        });
    }
    Ok(())
}
