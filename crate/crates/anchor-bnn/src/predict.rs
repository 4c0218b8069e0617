//! Ensemble predictive moments and derived-quantity propagation.
//!
//! The predictive mean is the member average; epistemic covariance is the
//! unbiased sample covariance of member outputs. Aleatory noise is kept
//! separate: `total = epistemic + Sigma_noise`, and exported "epistemic"
//! bands never include the noise term.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::train::EnsembleModel;

/// Predictions of an ensemble at a set of query points, in raw units.
#[derive(Debug, Clone)]
pub struct PredictiveSummary {
    /// `(n, output_dim)` predictive means.
    pub mean: DMatrix<f64>,
    /// Per-point epistemic output covariance (`output_dim` square).
    pub epistemic_cov: Vec<DMatrix<f64>>,
    /// Diagonal aleatory noise covariance, raw units.
    pub noise_var: DVector<f64>,
    /// Raw member outputs, one `(n, output_dim)` matrix per member.
    pub member_outputs: Vec<DMatrix<f64>>,
    /// Set when the ensemble has a single member: the epistemic covariance
    /// is zero by convention and should not be trusted.
    pub single_member_warning: bool,
}

impl PredictiveSummary {
    pub fn n_points(&self) -> usize {
        self.mean.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.mean.ncols()
    }

    /// Total covariance at point `i`: epistemic plus aleatory.
    pub fn total_cov(&self, i: usize) -> DMatrix<f64> {
        let mut c = self.epistemic_cov[i].clone();
        for j in 0..self.output_dim() {
            c[(j, j)] += self.noise_var[j];
        }
        c
    }

    /// `(n, output_dim)` epistemic standard deviations.
    pub fn epistemic_std(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_points(), self.output_dim(), |i, j| {
            self.epistemic_cov[i][(j, j)].max(0.0).sqrt()
        })
    }

    /// `(n, output_dim)` total (epistemic + aleatory) variances.
    pub fn total_var(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_points(), self.output_dim(), |i, j| {
            self.epistemic_cov[i][(j, j)].max(0.0) + self.noise_var[j]
        })
    }

    pub fn total_std(&self) -> DMatrix<f64> {
        self.total_var().map(|v| v.sqrt())
    }
}

/// Evaluate the ensemble at raw-unit query inputs.
pub fn predict(model: &EnsembleModel, x_raw: &DMatrix<f64>) -> Result<PredictiveSummary> {
    if x_raw.ncols() != model.spec.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: model.spec.input_dim(),
            got: x_raw.ncols(),
        });
    }
    let k = model.members.len();
    if k == 0 {
        return Err(Error::InsufficientEnsemble { required: 1, got: 0 });
    }
    let x_scaled = model.scaling.scale_x(x_raw);
    let mut member_outputs = Vec::with_capacity(k);
    for m in &model.members {
        let y_scaled = m.forward_batch(&x_scaled)?;
        member_outputs.push(model.scaling.unscale_y(&y_scaled));
    }
    let n = x_raw.nrows();
    let out = model.spec.output_dim();
    let mut mean = DMatrix::zeros(n, out);
    for y in &member_outputs {
        mean += y;
    }
    mean /= k as f64;
    let mut epistemic_cov = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = DMatrix::zeros(out, out);
        if k > 1 {
            for y in &member_outputs {
                let diff = DVector::from_fn(out, |j, _| y[(i, j)] - mean[(i, j)]);
                c += &diff * diff.transpose();
            }
            c /= (k - 1) as f64;
        }
        epistemic_cov.push(c);
    }
    Ok(PredictiveSummary {
        mean,
        epistemic_cov,
        noise_var: model.noise_var.clone(),
        member_outputs,
        single_member_warning: k == 1,
    })
}

/// Mean and uncertainty band of the plastic behavior law
/// `sigma(eps) = a + b (eps)^c`, propagated through the ensemble's
/// `(b, c)` predictions at one query point.
#[derive(Debug, Clone)]
pub struct BehaviorLawBand {
    pub strain: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Propagate per-member `(b, c)` pairs to stress values over a strain grid.
pub fn propagate_behavior_law(
    b_members: &[f64],
    c_members: &[f64],
    strain: &[f64],
    a: f64,
) -> Result<BehaviorLawBand> {
    if b_members.len() != c_members.len() || b_members.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: b_members.len(),
            got: c_members.len(),
        });
    }
    if let Some(&bad) = strain.iter().find(|&&e| e <= 0.0) {
        return Err(Error::Domain(format!(
            "strain grid must be positive, got {bad}"
        )));
    }
    let k = b_members.len();
    let mut mean = Vec::with_capacity(strain.len());
    let mut std = Vec::with_capacity(strain.len());
    for &eps in strain {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..k {
            let s = a + b_members[i] * eps.powf(c_members[i]);
            sum += s;
            sum_sq += s * s;
        }
        let m = sum / k as f64;
        let var = if k > 1 {
            (sum_sq - k as f64 * m * m) / (k as f64 - 1.0)
        } else {
            0.0
        };
        mean.push(m);
        std.push(var.max(0.0).sqrt());
    }
    Ok(BehaviorLawBand {
        strain: strain.to_vec(),
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Scaling;
    use crate::nn::{NetworkSpec, ParamVector};
    use crate::train::Mode;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    /// Model of no-hidden-layer scalar nets with fixed (w, b) members.
    fn affine_model(params: &[(f64, f64)], noise_var: f64, scaling: Scaling) -> EnsembleModel {
        let spec = NetworkSpec::with_default_slope(1, vec![], 1).unwrap();
        let members = params
            .iter()
            .map(|&(w, b)| {
                ParamVector::from_values(&spec, DVector::from_vec(vec![w, b])).unwrap()
            })
            .collect();
        EnsembleModel {
            spec,
            mode: Mode::Vanilla,
            members,
            anchors: Vec::new(),
            anchor_prior: None,
            noise_var: DVector::from_vec(vec![noise_var]),
            scaling,
        }
    }

    #[test]
    fn identical_members_have_zero_epistemic_cov() {
        let model = affine_model(&[(1.0, 0.5), (1.0, 0.5)], 0.01, Scaling::identity(1, 1));
        let x = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 2.0]);
        let s = predict(&model, &x).unwrap();
        for i in 0..3 {
            assert_eq!(s.epistemic_cov[i][(0, 0)], 0.0);
            assert_relative_eq!(s.mean[(i, 0)], x[(i, 0)] + 0.5);
        }
    }

    #[test]
    fn two_member_hand_variance() {
        // members output 1.0 and 3.0 -> mean 2, epistemic var 2 (K-1 = 1)
        let model = affine_model(&[(0.0, 1.0), (0.0, 3.0)], 0.04, Scaling::identity(1, 1));
        let x = DMatrix::from_row_slice(1, 1, &[0.7]);
        let s = predict(&model, &x).unwrap();
        assert_relative_eq!(s.mean[(0, 0)], 2.0);
        assert_relative_eq!(s.epistemic_cov[0][(0, 0)], 2.0);
        // total = epistemic + noise, by construction
        assert_eq!(
            s.total_cov(0)[(0, 0)],
            s.epistemic_cov[0][(0, 0)] + 0.04
        );
    }

    #[test]
    fn single_member_flagged() {
        let model = affine_model(&[(1.0, 0.0)], 0.01, Scaling::identity(1, 1));
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let s = predict(&model, &x).unwrap();
        assert!(s.single_member_warning);
        assert_eq!(s.epistemic_cov[0][(0, 0)], 0.0);
    }

    #[test]
    fn output_rescaling_equivariance() {
        // same scaled-space members under two output scalings: the mean is
        // affine in the scaling, the covariance quadratic
        let base = affine_model(&[(0.4, -0.2), (0.9, 0.3)], 0.01, Scaling::identity(1, 1));
        let mut scaled = base.clone();
        let c = 3.0;
        scaled.scaling.y_std = vec![c];
        scaled.scaling.y_mean = vec![5.0];
        scaled.noise_var = DVector::from_vec(vec![0.01 * c * c]);
        let x = DMatrix::from_row_slice(2, 1, &[-0.4, 0.8]);
        let a = predict(&base, &x).unwrap();
        let b = predict(&scaled, &x).unwrap();
        for i in 0..2 {
            assert_relative_eq!(b.mean[(i, 0)], c * a.mean[(i, 0)] + 5.0, epsilon = 1e-12);
            assert_relative_eq!(
                b.epistemic_cov[i][(0, 0)],
                c * c * a.epistemic_cov[i][(0, 0)],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn behavior_law_unit_strain() {
        let band = propagate_behavior_law(&[100.0, 200.0], &[0.3, 0.7], &[1.0], 400.0).unwrap();
        // at eps = 1 every member contributes a + b
        assert_relative_eq!(band.mean[0], 400.0 + 150.0);
    }

    #[test]
    fn behavior_law_identical_members_zero_band() {
        let band =
            propagate_behavior_law(&[150.0, 150.0], &[0.5, 0.5], &[0.01, 0.1, 1.0], 400.0).unwrap();
        assert!(band.std.iter().all(|&s| s == 0.0));
        assert_relative_eq!(band.mean[2], 550.0);
    }

    #[test]
    fn behavior_law_hand_value() {
        // K=2, b in {100, 200}, c = 0.5, eps = 0.04 -> mean 400 + 150*0.2
        let band = propagate_behavior_law(&[100.0, 200.0], &[0.5, 0.5], &[0.04], 400.0).unwrap();
        assert_relative_eq!(band.mean[0], 430.0, max_relative = 1e-12);
    }

    #[test]
    fn behavior_law_rejects_nonpositive_strain() {
        assert!(propagate_behavior_law(&[100.0], &[0.5], &[0.0], 400.0).is_err());
        assert!(propagate_behavior_law(&[100.0], &[0.5], &[-0.1], 400.0).is_err());
    }
}
