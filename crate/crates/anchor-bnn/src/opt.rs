//! Full-batch Adam with geometric step-size decay.
//!
//! Both training stages run this optimizer; the paper's algorithms leave
//! the optimizer unspecified, so it is deliberately plain. Losses are sums
//! over data points (never averages) so that regularization terms keep the
//! weighting of the governing objective.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate decays geometrically to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Record every `trace_stride`-th epoch (plus the last one).
    pub trace_stride: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            epochs: 5000,
            lr: 1e-3,
            final_lr_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            trace_stride: 0, // 0 = auto (about 100 rows)
        }
    }
}

impl OptConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    fn stride(&self) -> usize {
        if self.trace_stride > 0 {
            self.trace_stride
        } else {
            (self.epochs / 100).max(1)
        }
    }

    pub(crate) fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction >= 1.0 {
            return self.lr;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr * self.final_lr_fraction.powf(t)
    }
}

/// Additive pieces of a training objective, kept separate for traces.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub data_fit: f64,
    pub reg: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.data_fit + self.reg
    }
}

/// One recorded point of a training trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub data_fit: f64,
    pub reg: f64,
    pub total: f64,
}

/// First/second-moment accumulators of one Adam run.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: DVector<f64>,
    v: DVector<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
            t: 0,
        }
    }

    /// One bias-corrected update of `w` against `grad`.
    pub fn step(&mut self, w: &mut DVector<f64>, grad: &DVector<f64>, lr: f64, cfg: &OptConfig) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for i in 0..w.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat: f64 = self.m[i] / bc1;
            let v_hat: f64 = self.v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Minimize `eval`'s loss starting from `init`, one full-batch step per
/// epoch. `eval` must write the gradient into its second argument and
/// return the loss parts.
///
/// Fails with `NumericOverflow` as soon as the loss stops being finite.
pub fn adam_minimize<F>(
    init: DVector<f64>,
    mut eval: F,
    cfg: &OptConfig,
) -> Result<(DVector<f64>, Vec<TraceRow>)>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> Result<LossParts>,
{
    let d = init.len();
    let mut w = init;
    let mut grad = DVector::zeros(d);
    let mut state = AdamState::new(d);
    let stride = cfg.stride();
    let mut trace = Vec::with_capacity(cfg.epochs / stride + 2);
    for epoch in 0..cfg.epochs {
        let parts = eval(&w, &mut grad)?;
        let total = parts.total();
        if !total.is_finite() {
            return Err(Error::NumericOverflow(format!("loss at epoch {epoch}")));
        }
        if epoch % stride == 0 || epoch + 1 == cfg.epochs {
            trace.push(TraceRow {
                epoch,
                data_fit: parts.data_fit,
                reg: parts.reg,
                total,
            });
        }
        state.step(&mut w, &grad, cfg.lr_at(epoch), cfg);
    }
    Ok((w, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        // f(w) = (w0 - 3)^2 + 10 (w1 + 1)^2
        let cfg = OptConfig {
            epochs: 3000,
            lr: 0.05,
            ..OptConfig::default()
        };
        let (w, trace) = adam_minimize(
            DVector::from_vec(vec![0.0, 0.0]),
            |w, g| {
                g[0] = 2.0 * (w[0] - 3.0);
                g[1] = 20.0 * (w[1] + 1.0);
                Ok(LossParts {
                    data_fit: (w[0] - 3.0).powi(2) + 10.0 * (w[1] + 1.0).powi(2),
                    reg: 0.0,
                })
            },
            &cfg,
        )
        .unwrap();
        assert!((w[0] - 3.0).abs() < 1e-6);
        assert!((w[1] + 1.0).abs() < 1e-6);
        assert!(trace.last().unwrap().total < trace.first().unwrap().total);
    }

    #[test]
    fn reports_nonfinite_loss() {
        let cfg = OptConfig {
            epochs: 10,
            lr: 1.0,
            ..OptConfig::default()
        };
        let r = adam_minimize(
            DVector::from_vec(vec![1.0]),
            |_, g| {
                g[0] = f64::NAN;
                Ok(LossParts {
                    data_fit: f64::NAN,
                    reg: 0.0,
                })
            },
            &cfg,
        );
        assert!(matches!(r, Err(Error::NumericOverflow(_))));
    }

    #[test]
    fn lr_decays_to_final_fraction() {
        let cfg = OptConfig {
            epochs: 101,
            lr: 1e-2,
            final_lr_fraction: 0.1,
            ..OptConfig::default()
        };
        assert!((cfg.lr_at(0) - 1e-2).abs() < 1e-15);
        assert!((cfg.lr_at(100) - 1e-3).abs() < 1e-12);
    }
}
