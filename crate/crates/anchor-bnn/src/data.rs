//! Datasets with known diagonal noise, affine scaling transforms, and the
//! two resampling schemes that give ensemble members distinct data views.
//!
//! Training always happens in scaled space: inputs mapped affinely into
//! roughly `[-1, 1]`, outputs standardized, and the noise covariance
//! transformed along. Raw units are restored at prediction time.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::prior::MeanKind;
use crate::seed::Seed;

/// Paired inputs/outputs with a known diagonal noise covariance, in raw
/// units. `n = 0` is permitted only for the prior-only training limit;
/// resampling requires `n >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    noise_var: DVector<f64>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, noise_var: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::ShapeMismatch {
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        if noise_var.len() != y.ncols() {
            return Err(Error::ShapeMismatch {
                expected: y.ncols(),
                got: noise_var.len(),
            });
        }
        if noise_var.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Config(
                "noise covariance diagonal must be positive and finite".into(),
            ));
        }
        let input_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        let output_names = (0..y.ncols()).map(|j| format!("y{j}")).collect();
        Ok(Dataset {
            x,
            y,
            noise_var,
            input_names,
            output_names,
        })
    }

    /// Zero-observation dataset for the prior-only limit.
    pub fn empty(input_dim: usize, output_dim: usize, noise_var: DVector<f64>) -> Result<Self> {
        Self::new(
            DMatrix::zeros(0, input_dim),
            DMatrix::zeros(0, output_dim),
            noise_var,
        )
    }

    pub fn with_names(mut self, inputs: &[&str], outputs: &[&str]) -> Self {
        self.input_names = inputs.iter().map(|s| s.to_string()).collect();
        self.output_names = outputs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn noise_var(&self) -> &DVector<f64> {
        &self.noise_var
    }

    /// Likelihood resampling: `y_i ~ N(y_i, Sigma_noise)`, inputs unchanged.
    pub fn resample_likelihood(&self, seed: Seed) -> Dataset {
        let mut rng = seed.rng();
        let mut y = self.y.clone();
        let std: Vec<f64> = self.noise_var.iter().map(|v| v.sqrt()).collect();
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                let z: f64 = rng.sample(StandardNormal);
                y[(i, j)] += std[j] * z;
            }
        }
        Dataset {
            x: self.x.clone(),
            y,
            noise_var: self.noise_var.clone(),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
        }
    }

    /// Bootstrap resampling: rows drawn jointly with replacement.
    pub fn resample_bootstrap(&self, seed: Seed) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::Domain("cannot bootstrap an empty dataset".into()));
        }
        let mut rng = seed.rng();
        let n = self.len();
        let mut x = DMatrix::zeros(n, self.input_dim());
        let mut y = DMatrix::zeros(n, self.output_dim());
        for i in 0..n {
            let pick = rng.gen_range(0..n);
            x.row_mut(i).copy_from(&self.x.row(pick));
            y.row_mut(i).copy_from(&self.y.row(pick));
        }
        Ok(Dataset {
            x,
            y,
            noise_var: self.noise_var.clone(),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
        })
    }

    /// Map the dataset into scaled units (inputs affine, outputs
    /// standardized, noise variance divided by the squared output scale).
    pub fn scaled(&self, scaling: &Scaling) -> Dataset {
        Dataset {
            x: scaling.scale_x(&self.x),
            y: scaling.scale_y(&self.y),
            noise_var: scaling.scale_noise_var(&self.noise_var),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
        }
    }

    /// Write rows as CSV with a header naming inputs then outputs.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<&str> = self
            .input_names
            .iter()
            .chain(self.output_names.iter())
            .map(|s| s.as_str())
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = Vec::with_capacity(self.input_dim() + self.output_dim());
            for j in 0..self.input_dim() {
                rec.push(format!("{}", self.x[(i, j)]));
            }
            for j in 0..self.output_dim() {
                rec.push(format!("{}", self.y[(i, j)]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a CSV written by [`Dataset::write_csv`]. The split between
    /// input and output columns and the noise covariance come from `meta`.
    pub fn read_csv(path: &Path, meta: &DatasetMeta) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
        let n_in = meta.input_names.len();
        let n_out = meta.output_names.len();
        if header.len() != n_in + n_out {
            return Err(Error::Config(format!(
                "CSV has {} columns, metadata declares {} inputs + {} outputs",
                header.len(),
                n_in,
                n_out
            )));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            rows.push(vals.map_err(|e| Error::Config(format!("bad CSV number: {e}")))?);
        }
        let n = rows.len();
        let mut x = DMatrix::zeros(n, n_in);
        let mut y = DMatrix::zeros(n, n_out);
        for (i, row) in rows.iter().enumerate() {
            for j in 0..n_in {
                x[(i, j)] = row[j];
            }
            for j in 0..n_out {
                y[(i, j)] = row[n_in + j];
            }
        }
        let ds = Dataset::new(x, y, DVector::from_vec(meta.noise_var.clone()))?;
        Ok(Dataset {
            input_names: meta.input_names.clone(),
            output_names: meta.output_names.clone(),
            ..ds
        })
    }

    /// Sidecar metadata describing this dataset.
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
            noise_var: self.noise_var.iter().copied().collect(),
            distribution: None,
            seed: None,
            noise_cov_fracs: None,
            content_hash: None,
        }
    }
}

/// Sidecar metadata stored next to dataset CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// Diagonal noise covariance in raw output units.
    pub noise_var: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distribution: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// Coefficients of variation used by the generator, when applicable.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise_cov_fracs: Option<Vec<f64>>,
    /// SHA-256 of the CSV contents, filled in when written to disk.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub content_hash: Option<String>,
}

impl DatasetMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Per-dimension affine transforms between raw and scaled units.
///
/// Inputs: `x_scaled = (x - center) / half_range` (data range maps to
/// `[-1, 1]`). Outputs: `y_scaled = (y - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub x_center: Vec<f64>,
    pub x_half_range: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Scaling {
    /// Identity transform (already-scaled data).
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Scaling {
            x_center: vec![0.0; input_dim],
            x_half_range: vec![1.0; input_dim],
            y_mean: vec![0.0; output_dim],
            y_std: vec![1.0; output_dim],
        }
    }

    /// Fit the transform to a training set. Degenerate (constant) columns
    /// keep unit scale so the transform stays invertible.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Domain(
                "cannot fit scaling to an empty dataset; use Scaling::identity".into(),
            ));
        }
        let x = data.x();
        let y = data.y();
        let n = x.nrows() as f64;
        let mut s = Scaling::identity(x.ncols(), y.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in col.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            s.x_center[j] = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            s.x_half_range[j] = if half > 0.0 { half } else { 1.0 };
        }
        for j in 0..y.ncols() {
            let col = y.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            s.y_mean[j] = mean;
            s.y_std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(s)
    }

    pub fn input_dim(&self) -> usize {
        self.x_center.len()
    }

    pub fn output_dim(&self) -> usize {
        self.y_mean.len()
    }

    pub fn scale_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.x_center[j]) / self.x_half_range[j]
        })
    }

    pub fn unscale_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            x[(i, j)] * self.x_half_range[j] + self.x_center[j]
        })
    }

    pub fn scale_y(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
            (y[(i, j)] - self.y_mean[j]) / self.y_std[j]
        })
    }

    pub fn unscale_y(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
            y[(i, j)] * self.y_std[j] + self.y_mean[j]
        })
    }

    pub fn scale_noise_var(&self, var: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(var.len(), |j, _| var[j] / (self.y_std[j] * self.y_std[j]))
    }

    /// Express a raw-unit affine mean `slope * x[feature] + intercept`
    /// (raw output `out_idx`) in scaled coordinates.
    pub fn affine_mean_to_scaled(
        &self,
        slope: f64,
        intercept: f64,
        feature: usize,
        out_idx: usize,
    ) -> MeanKind {
        let h = self.x_half_range[feature];
        let c = self.x_center[feature];
        let sd = self.y_std[out_idx];
        let mu = self.y_mean[out_idx];
        MeanKind::Affine {
            slope: slope * h / sd,
            intercept: (slope * c + intercept - mu) / sd,
            feature,
        }
    }

    /// Raw-unit kernel amplitude (output variance units) in scaled space.
    pub fn kernel_amp_to_scaled(&self, amp_raw: f64, out_idx: usize) -> f64 {
        amp_raw / (self.y_std[out_idx] * self.y_std[out_idx])
    }

    /// Raw-unit lengthscale along one input feature in scaled space.
    pub fn lengthscale_to_scaled(&self, l_raw: f64, feature: usize) -> f64 {
        l_raw / self.x_half_range[feature]
    }

    /// Raw-unit output bound in scaled space.
    pub fn bound_to_scaled(&self, bound_raw: f64, out_idx: usize) -> f64 {
        (bound_raw - self.y_mean[out_idx]) / self.y_std[out_idx]
    }
}
