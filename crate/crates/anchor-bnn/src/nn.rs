//! Fully-connected network evaluation and exact gradients.
//!
//! Parameters live in a single flat vector so that ensembles, anchors and
//! low-rank priors can treat a network as a point in R^d. The flat layout is
//! fixed: for each layer, the kernel in row-major (output-unit-major) order,
//! then the bias. Checkpoints written with one build therefore load in any
//! other.
//!
//! All arithmetic is f64. Activations are leaky ReLU on hidden layers and
//! identity on the output layer.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;

/// Architecture of a fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    input_dim: usize,
    hidden_widths: Vec<usize>,
    output_dim: usize,
    activation_slope: f64,
}

impl NetworkSpec {
    /// Build a spec, enforcing `dims >= 1` and `activation_slope in [0, 1)`.
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation_slope: f64,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidSpec("input/output dims must be >= 1".into()));
        }
        if hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidSpec("hidden widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&activation_slope) {
            return Err(Error::InvalidSpec(format!(
                "activation slope must lie in [0, 1), got {activation_slope}"
            )));
        }
        Ok(NetworkSpec {
            input_dim,
            hidden_widths,
            output_dim,
            activation_slope,
        })
    }

    /// Common default: leaky ReLU slope 0.01.
    pub fn with_default_slope(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
    ) -> Result<Self> {
        Self::new(input_dim, hidden_widths, output_dim, 0.01)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    pub fn activation_slope(&self) -> f64 {
        self.activation_slope
    }

    /// Layer widths including input and output: `[n_in, h_1, .., h_L, n_out]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_widths.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden_widths);
        sizes.push(self.output_dim);
        sizes
    }

    /// Total parameter count `d = sum_l (n_l * n_{l+1} + n_{l+1})`.
    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offset table describing where each layer's kernel and bias live in
    /// the flat parameter vector.
    pub fn layout(&self) -> Vec<LayerBlock> {
        let sizes = self.layer_sizes();
        let mut blocks = Vec::with_capacity(sizes.len() - 1);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            blocks.push(LayerBlock {
                weight_offset: offset,
                fan_in,
                fan_out,
                bias_offset: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        blocks
    }

    /// Stable content hash of the architecture, used to match checkpoints.
    pub fn content_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.input_dim.to_le_bytes());
        for &w in &self.hidden_widths {
            h.update(w.to_le_bytes());
        }
        h.update(self.output_dim.to_le_bytes());
        h.update(self.activation_slope.to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Location of one layer's parameters inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerBlock {
    pub weight_offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias_offset: usize,
}

impl LayerBlock {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

/// Kernel and bias of a single layer in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Shape `(fan_out, fan_in)`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// A network's parameters as a flat vector tied to its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    spec: NetworkSpec,
    values: DVector<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamVector {
            values: DVector::zeros(spec.param_count()),
            spec: spec.clone(),
        }
    }

    pub fn from_values(spec: &NetworkSpec, values: DVector<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::ShapeMismatch {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        Ok(ParamVector {
            spec: spec.clone(),
            values,
        })
    }

    /// He initialization: kernel entries `N(0, 2/fan_in)`, biases zero.
    pub fn he_init(spec: &NetworkSpec, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let mut values = DVector::zeros(spec.param_count());
        for block in spec.layout() {
            let std = (2.0 / block.fan_in as f64).sqrt();
            for i in 0..block.weight_len() {
                let z: f64 = rng.sample(StandardNormal);
                values[block.weight_offset + i] = std * z;
            }
            // biases stay zero
        }
        ParamVector {
            spec: spec.clone(),
            values,
        }
    }

    /// `self + scale * eps` with `eps ~ N(0, I_d)`.
    pub fn perturbed(&self, scale: f64, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let mut values = self.values.clone();
        for v in values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += scale * z;
        }
        ParamVector {
            spec: self.spec.clone(),
            values,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// View of one layer's kernel as transposed column-major storage.
    /// The row-major `(out, in)` block reads back as a `(in, out)` matrix,
    /// i.e. W^T, with no copy.
    fn weight_t_view(&self, block: &LayerBlock) -> DMatrixView<'_, f64> {
        let slice = &self.values.as_slice()[block.weight_offset..block.weight_offset + block.weight_len()];
        DMatrixView::from_slice(slice, block.fan_in, block.fan_out)
    }

    fn bias_view(&self, block: &LayerBlock) -> &[f64] {
        &self.values.as_slice()[block.bias_offset..block.bias_offset + block.fan_out]
    }

    /// Unflatten into per-layer kernel/bias matrices.
    pub fn unflatten(&self) -> Vec<LayerParams> {
        self.spec
            .layout()
            .iter()
            .map(|block| {
                let w_slice =
                    &self.values.as_slice()[block.weight_offset..block.weight_offset + block.weight_len()];
                LayerParams {
                    weight: DMatrix::from_row_slice(block.fan_out, block.fan_in, w_slice),
                    bias: DVector::from_column_slice(self.bias_view(block)),
                }
            })
            .collect()
    }

    /// Flatten per-layer matrices back into a vector. Inverse of
    /// [`ParamVector::unflatten`], bit-exact.
    pub fn flatten(spec: &NetworkSpec, layers: &[LayerParams]) -> Result<Self> {
        let layout = spec.layout();
        if layers.len() != layout.len() {
            return Err(Error::ShapeMismatch {
                expected: layout.len(),
                got: layers.len(),
            });
        }
        let mut values = DVector::zeros(spec.param_count());
        for (block, lp) in layout.iter().zip(layers) {
            if lp.weight.nrows() != block.fan_out
                || lp.weight.ncols() != block.fan_in
                || lp.bias.len() != block.fan_out
            {
                return Err(Error::ShapeMismatch {
                    expected: block.weight_len() + block.fan_out,
                    got: lp.weight.len() + lp.bias.len(),
                });
            }
            for o in 0..block.fan_out {
                for i in 0..block.fan_in {
                    values[block.weight_offset + o * block.fan_in + i] = lp.weight[(o, i)];
                }
            }
            for o in 0..block.fan_out {
                values[block.bias_offset + o] = lp.bias[o];
            }
        }
        Ok(ParamVector {
            spec: spec.clone(),
            values,
        })
    }

    /// Evaluate the network on a batch. `x` is `(n, input_dim)` with one row
    /// per sample; the result is `(n, output_dim)`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        let cache = self.forward_cache(x);
        Ok(cache.activations.into_iter().last().unwrap())
    }

    /// Evaluate a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        let xm = DMatrix::from_row_slice(1, x.len(), x);
        let y = self.forward_batch(&xm)?;
        Ok(y.row(0).transpose())
    }

    fn forward_cache(&self, x: &DMatrix<f64>) -> ForwardCache {
        let layout = self.spec.layout();
        let n_layers = layout.len();
        let slope = self.spec.activation_slope;
        let mut activations: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers + 1);
        let mut pre_activations: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers.saturating_sub(1));
        activations.push(x.clone());
        for (l, block) in layout.iter().enumerate() {
            let wt = self.weight_t_view(block);
            // z = a * W^T + 1 b^T, computed column-block-wise so every store
            // stays contiguous in nalgebra's column-major layout.
            let mut z = activations[l].clone() * wt;
            let bias = self.bias_view(block);
            for (j, &b) in bias.iter().enumerate() {
                z.column_mut(j).add_scalar_mut(b);
            }
            let is_output = l + 1 == n_layers;
            if is_output {
                activations.push(z);
            } else {
                let a = z.map(|v| if v >= 0.0 { v } else { slope * v });
                pre_activations.push(z);
                activations.push(a);
            }
        }
        ForwardCache {
            activations,
            pre_activations,
        }
    }

    /// Gradient of a squared-error style loss over a batch.
    ///
    /// Returns `(loss, grad)` where `grad` shares this vector's layout.
    /// The loss is summed over samples, not averaged, so regularization
    /// terms added by callers keep the weighting of the governing
    /// objective.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        loss: &LossSpec,
    ) -> Result<(f64, ParamVector)> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        if y.ncols() != self.spec.output_dim || y.nrows() != x.nrows() {
            return Err(Error::ShapeMismatch {
                expected: x.nrows() * self.spec.output_dim,
                got: y.nrows() * y.ncols(),
            });
        }
        let layout = self.spec.layout();
        let slope = self.spec.activation_slope;
        let cache = self.forward_cache(x);
        let yhat = cache.activations.last().unwrap();
        if yhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("forward pass".into()));
        }

        // residual r = yhat - y, loss = sum_i sum_o prec_o r_io^2
        let mut g = yhat - y;
        let mut loss_value = 0.0;
        match loss {
            LossSpec::SquaredError => {
                loss_value = g.iter().map(|v| v * v).sum();
                g *= 2.0;
            }
            LossSpec::WeightedSquaredError { noise_prec } => {
                if noise_prec.len() != self.spec.output_dim {
                    return Err(Error::ShapeMismatch {
                        expected: self.spec.output_dim,
                        got: noise_prec.len(),
                    });
                }
                for (j, &p) in noise_prec.iter().enumerate() {
                    let col = g.column(j);
                    loss_value += p * col.iter().map(|v| v * v).sum::<f64>();
                }
                for (j, &p) in noise_prec.iter().enumerate() {
                    g.column_mut(j).scale_mut(2.0 * p);
                }
            }
        }

        let mut grad = DVector::zeros(self.spec.param_count());
        for l in (0..layout.len()).rev() {
            let block = &layout[l];
            // dW^T = A_l^T G, whose column-major storage equals the
            // row-major kernel block layout.
            let mut dwt = DMatrix::zeros(block.fan_in, block.fan_out);
            dwt.gemm_tr(1.0, &cache.activations[l], &g, 0.0);
            grad.as_mut_slice()[block.weight_offset..block.weight_offset + block.weight_len()]
                .copy_from_slice(dwt.as_slice());
            for j in 0..block.fan_out {
                grad[block.bias_offset + j] = g.column(j).sum();
            }
            if l > 0 {
                // dL/dA_l = G W_l, then gate by the activation derivative.
                let w = self.weight_t_view(block).transpose();
                let mut g_prev = &g * w;
                let z = &cache.pre_activations[l - 1];
                g_prev.zip_apply(z, |gv, zv| {
                    if zv < 0.0 {
                        *gv *= slope;
                    }
                });
                g = g_prev;
            }
        }
        let grad = ParamVector {
            spec: self.spec.clone(),
            values: grad,
        };
        Ok((loss_value, grad))
    }
}

/// Loss family whose network-mediated gradient [`ParamVector::backward`]
/// computes. Parameter-space regularizers are differentiated analytically by
/// the training layer and added on top.
#[derive(Debug, Clone)]
pub enum LossSpec<'a> {
    /// `sum_i ||y_i - f(x_i)||^2` — pre-training objective.
    SquaredError,
    /// `sum_i (y_i - f(x_i))^T diag(noise_prec) (y_i - f(x_i))` — the
    /// Gaussian-likelihood data-fit term with diagonal noise precision.
    WeightedSquaredError { noise_prec: &'a DVector<f64> },
}

struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[l+1]` the output of
    /// transition `l`.
    activations: Vec<DMatrix<f64>>,
    /// Pre-activation values of hidden layers, for the backward gate.
    pre_activations: Vec<DMatrix<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn spec(i: usize, h: Vec<usize>, o: usize) -> NetworkSpec {
        NetworkSpec::new(i, h, o, 0.01).unwrap()
    }

    #[test]
    fn param_count_paper_architecture() {
        // 1 input, four hidden layers of 50, 1 output.
        assert_eq!(spec(1, vec![50, 50, 50, 50], 1).param_count(), 7801);
    }

    #[test]
    fn param_count_single_neuron() {
        assert_eq!(spec(1, vec![], 1).param_count(), 2);
    }

    #[test]
    fn param_count_hand_counted() {
        // 100 + 3*420 + 105
        assert_eq!(spec(4, vec![20, 20, 20, 20], 5).param_count(), 1465);
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(0, vec![3], 1, 0.01).is_err());
        assert!(NetworkSpec::new(1, vec![0], 1, 0.01).is_err());
        assert!(NetworkSpec::new(1, vec![3], 1, 1.0).is_err());
        assert!(NetworkSpec::new(1, vec![3], 1, -0.1).is_err());
        assert!(NetworkSpec::new(1, vec![3], 1, 0.0).is_ok());
    }

    #[test]
    fn forward_zero_params_gives_zero() {
        let s = spec(2, vec![4, 3], 2);
        let p = ParamVector::zeros(&s);
        let y = p.forward(&[1.5, -2.0]).unwrap();
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn forward_affine_no_hidden() {
        // W=[2], b=[1], x=3 -> 7
        let s = spec(1, vec![], 1);
        let p = ParamVector::from_values(&s, DVector::from_vec(vec![2.0, 1.0])).unwrap();
        let y = p.forward(&[3.0]).unwrap();
        assert_relative_eq!(y[0], 7.0);
    }

    #[test]
    fn forward_leaky_branch() {
        // one hidden unit: kernel -1, bias 0, output kernel 1, bias 0; x=1
        // hidden pre-activation -1 -> leaky gives -0.01
        let s = spec(1, vec![1], 1);
        let p =
            ParamVector::from_values(&s, DVector::from_vec(vec![-1.0, 0.0, 1.0, 0.0])).unwrap();
        let y = p.forward(&[1.0]).unwrap();
        assert_relative_eq!(y[0], -0.01, max_relative = 1e-12);
    }

    #[test]
    fn forward_rejects_bad_input_dim() {
        let s = spec(2, vec![3], 1);
        let p = ParamVector::zeros(&s);
        assert!(matches!(
            p.forward(&[1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn he_init_deterministic_and_biases_zero() {
        let s = spec(3, vec![8, 8], 2);
        let a = ParamVector::he_init(&s, Seed::new(9));
        let b = ParamVector::he_init(&s, Seed::new(9));
        assert_eq!(a.values(), b.values());
        for block in s.layout() {
            for j in 0..block.fan_out {
                assert_eq!(a.values()[block.bias_offset + j], 0.0);
            }
        }
        let c = ParamVector::he_init(&s, Seed::new(10));
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn he_init_variance_matches_scheme() {
        // fan_in = 50: kernel variance should be 2/50 = 0.04 within 5%.
        let s = spec(50, vec![40], 1);
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for i in 0..50 {
            let p = ParamVector::he_init(&s, Seed::new(1000 + i));
            let block = s.layout()[0];
            for k in 0..block.weight_len() {
                let v = p.values()[block.weight_offset + k];
                sum_sq += v * v;
                n += 1;
            }
        }
        let var = sum_sq / n as f64; // mean is 0 by construction
        assert!(n >= 100_000);
        assert!((var - 0.04).abs() < 0.05 * 0.04, "var = {var}");
    }

    #[test]
    fn perturb_zero_scale_is_identity() {
        let s = spec(2, vec![5], 1);
        let p = ParamVector::he_init(&s, Seed::new(3));
        let q = p.perturbed(0.0, Seed::new(4));
        assert_eq!(p.values(), q.values());
    }

    #[test]
    fn perturb_mean_within_clt_band() {
        // average of 1000 perturbations at scale 0.01 stays within 3 sigma
        // of the original in every coordinate: 3 * 0.01 / sqrt(1000).
        let s = spec(1, vec![10], 1);
        let p = ParamVector::he_init(&s, Seed::new(5));
        let n = 1000;
        let mut mean = DVector::zeros(p.len());
        for i in 0..n {
            mean += p.perturbed(0.01, Seed::new(6).derive(i as u64)).values();
        }
        mean /= n as f64;
        let band = 3.0 * 0.01 / (n as f64).sqrt();
        // CLT band is per-coordinate 3 sigma; allow the expected few outliers
        // by checking the max deviation against a 4.5 sigma band instead.
        let max_dev = (mean - p.values()).amax();
        assert!(max_dev < 1.5 * band, "max deviation {max_dev} vs band {band}");
    }

    #[test]
    fn perturb_distinct_seeds_differ_everywhere() {
        let s = spec(2, vec![6, 6], 2);
        let p = ParamVector::zeros(&s);
        let a = p.perturbed(0.01, Seed::new(1));
        let b = p.perturbed(0.01, Seed::new(2));
        for i in 0..a.len() {
            assert_ne!(a.values()[i], b.values()[i], "coordinate {i}");
        }
    }

    #[test]
    fn final_layer_positive_homogeneity() {
        // scaling the last layer's kernel and bias by c scales outputs by c
        let s = spec(2, vec![7, 5], 3);
        let p = ParamVector::he_init(&s, Seed::new(11)).perturbed(0.3, Seed::new(12));
        let mut layers = p.unflatten();
        let c = 3.7;
        let last = layers.last_mut().unwrap();
        last.weight *= c;
        last.bias *= c;
        let q = ParamVector::flatten(&s, &layers).unwrap();
        let x = [0.4, -1.2];
        let y1 = p.forward(&x).unwrap();
        let y2 = q.forward(&x).unwrap();
        assert_relative_eq!(y2, y1 * c, max_relative = 1e-12);
    }

    #[test]
    fn gradient_zero_at_interpolating_optimum() {
        // an affine network that reproduces the data exactly has zero
        // data-fit gradient
        let s = spec(1, vec![], 1);
        let p = ParamVector::from_values(&s, DVector::from_vec(vec![2.0, -1.0])).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(3, 1, &[-1.0, 1.0, 3.0]);
        let (loss, grad) = p.backward(&x, &y, &LossSpec::SquaredError).unwrap();
        assert!(loss < 1e-20);
        assert!(grad.values().amax() < 1e-10);
    }

    #[test]
    fn gradient_matches_linear_least_squares_closed_form() {
        // no hidden layers, squared loss: grad_w = 2 X^T (Xw + b - y),
        // grad_b = 2 sum(Xw + b - y)
        let s = spec(2, vec![], 1);
        let p = ParamVector::from_values(&s, DVector::from_vec(vec![0.5, -0.25, 0.1])).unwrap();
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, -0.5, 0.3, 2.0, -1.0, 0.0, 1.0]);
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 0.0, -1.0, 0.5]);
        let (_, grad) = p.backward(&x, &y, &LossSpec::SquaredError).unwrap();
        let w = DVector::from_vec(vec![0.5, -0.25]);
        let r = &x * &w + DVector::from_element(4, 0.1) - y.column(0);
        let gw = 2.0 * x.transpose() * &r;
        let gb = 2.0 * r.sum();
        assert_relative_eq!(grad.values()[0], gw[0], max_relative = 1e-12);
        assert_relative_eq!(grad.values()[1], gw[1], max_relative = 1e-12);
        assert_relative_eq!(grad.values()[2], gb, max_relative = 1e-12);
    }

    /// Central finite differences of the loss; the independent oracle for
    /// every gradient assertion in this crate.
    pub(crate) fn finite_difference_grad(
        p: &ParamVector,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        loss: &LossSpec,
        step: f64,
    ) -> DVector<f64> {
        let mut g = DVector::zeros(p.len());
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.values_mut()[i] += step;
            let mut minus = p.clone();
            minus.values_mut()[i] -= step;
            let (lp, _) = plus.backward(x, y, loss).unwrap();
            let (lm, _) = minus.backward(x, y, loss).unwrap();
            g[i] = (lp - lm) / (2.0 * step);
        }
        g
    }

    pub(crate) fn grad_rel_err(analytic: &DVector<f64>, fd: &DVector<f64>) -> f64 {
        let scale = analytic.amax().max(1e-12);
        (analytic - fd).amax() / scale
    }

    #[test]
    fn gradient_matches_finite_differences_weighted() {
        let s = spec(2, vec![6, 4], 2);
        let p = ParamVector::he_init(&s, Seed::new(21)).perturbed(0.1, Seed::new(22));
        let x = DMatrix::from_fn(5, 2, |i, j| ((i * 2 + j) as f64 * 0.37).sin());
        let y = DMatrix::from_fn(5, 2, |i, j| ((i + j) as f64 * 0.53).cos());
        let prec = DVector::from_vec(vec![4.0, 0.5]);
        let loss = LossSpec::WeightedSquaredError { noise_prec: &prec };
        let (_, grad) = p.backward(&x, &y, &loss).unwrap();
        let fd = finite_difference_grad(&p, &x, &y, &loss, 1e-5);
        assert!(grad_rel_err(grad.values(), &fd) < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn flatten_unflatten_roundtrip(seed in 0u64..1000, n_hidden in 0usize..4, w in 1usize..9) {
            let s = spec(2, vec![w; n_hidden], 2);
            let p = ParamVector::he_init(&s, Seed::new(seed)).perturbed(0.5, Seed::new(seed + 1));
            let q = ParamVector::flatten(&s, &p.unflatten()).unwrap();
            prop_assert_eq!(p.values(), q.values());
        }

        #[test]
        fn param_count_equals_he_init_length(inp in 1usize..5, n_hidden in 0usize..4, w in 1usize..11, out in 1usize..4) {
            let s = spec(inp, vec![w; n_hidden], out);
            let p = ParamVector::he_init(&s, Seed::new(1));
            prop_assert_eq!(p.len(), s.param_count());
        }

        #[test]
        fn backward_matches_finite_differences(seed in 0u64..500, n_hidden in 0usize..4, w in 1usize..11) {
            let s = spec(2, vec![w; n_hidden], 2);
            let p = ParamVector::he_init(&s, Seed::new(seed)).perturbed(0.2, Seed::new(seed ^ 0xabc));
            let mut rng = Seed::new(seed ^ 0x55).rng();
            let x = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
            let y = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
            let loss = LossSpec::SquaredError;
            let (_, grad) = p.backward(&x, &y, &loss).unwrap();
            let fd = finite_difference_grad(&p, &x, &y, &loss, 1e-5);
            prop_assert!(grad_rel_err(grad.values(), &fd) < 1e-4);
        }
    }
}
