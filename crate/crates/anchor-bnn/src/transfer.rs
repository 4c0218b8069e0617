//! Stage 1: pre-train the ensemble to functional-prior realizations, build
//! the low-rank parameter-space prior, and compute diagnostics of the
//! pre-trained weight distribution.
//!
//! Members are initialized as slightly perturbed copies of one shared
//! weight vector. That shared start is what makes the member-to-member
//! spread after pre-training attributable to the prior realizations alone,
//! and therefore what makes the extracted correlations meaningful. The
//! shared initialization is enforced with a token carried by every
//! pre-trained member.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::lowrank::LowRankGaussian;
use crate::nn::{LossSpec, NetworkSpec, ParamVector};
use crate::opt::{adam_minimize, LossParts, OptConfig};
use crate::prior::{lhs_standard_normal, sample_realization_joint, FunctionalPrior, PriorRealization};
use crate::seed::{Purpose, Seed};

/// Stage-1 budget and measurement-set shape.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    /// Latin-hypercube measurement points per realization.
    pub points: usize,
    /// Share one measurement set across members instead of resampling per
    /// member (resampled per member by default).
    pub shared_points: bool,
    /// Minibatch size; 0 trains full-batch. Epoch budgets assume
    /// minibatching (an epoch is one shuffled pass over the points).
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 1000,
            lr: 1e-2,
            final_lr_fraction: 0.05,
            points: 500,
            shared_points: false,
            batch_size: 32,
        }
    }
}

impl PretrainConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    fn opt(&self) -> OptConfig {
        OptConfig {
            epochs: self.epochs,
            lr: self.lr,
            final_lr_fraction: self.final_lr_fraction,
            ..OptConfig::default()
        }
    }
}

/// One member after stage-1 pre-training.
#[derive(Debug, Clone)]
pub struct PretrainedMember {
    pub weights: ParamVector,
    /// RMSE of the fit to the prior dataset, pooled over outputs.
    pub fit_rmse: f64,
    /// Token of the shared initialization this member started from.
    pub init_token: u64,
}

/// Hash identifying a concrete initialization vector.
pub fn init_token(omega_init: &ParamVector) -> u64 {
    let mut h = Sha256::new();
    for v in omega_init.values().iter() {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Fit one member to one prior realization, unregularized.
///
/// The member starts at `omega_init + 0.01 eps`, not at a fresh random
/// initialization. With `batch_size > 0` each epoch is one shuffled pass
/// over the prior dataset; the stated epoch budgets (100/200/2000 for
/// smooth-to-rough priors) assume this minibatch regime.
pub fn pretrain_member(
    omega_init: &ParamVector,
    realization: &PriorRealization,
    cfg: &PretrainConfig,
    seed: Seed,
) -> Result<PretrainedMember> {
    let spec = omega_init.spec().clone();
    let start = omega_init.perturbed(0.01, seed);
    let x = &realization.points;
    let y = &realization.values;
    let m = x.nrows();
    let n_res = (m * y.ncols()).max(1);
    let values = if cfg.batch_size == 0 || cfg.batch_size >= m {
        let (values, _trace) = adam_minimize(
            start.into_values(),
            |w, grad| {
                let p = ParamVector::from_values(&spec, w.clone())?;
                let (loss, g) = p.backward(x, y, &LossSpec::SquaredError)?;
                grad.copy_from(g.values());
                Ok(LossParts {
                    data_fit: loss,
                    reg: 0.0,
                })
            },
            &cfg.opt(),
        )?;
        values
    } else {
        minibatch_sse_fit(&spec, start.into_values(), x, y, cfg, seed.derive(0x5f))?
    };
    let weights = ParamVector::from_values(&spec, values)?;
    let (final_loss, _) = weights.backward(x, y, &LossSpec::SquaredError)?;
    Ok(PretrainedMember {
        weights,
        fit_rmse: (final_loss / n_res as f64).sqrt(),
        init_token: init_token(omega_init),
    })
}

fn minibatch_sse_fit(
    spec: &NetworkSpec,
    init: DVector<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &PretrainConfig,
    shuffle_seed: Seed,
) -> Result<DVector<f64>> {
    let opt = cfg.opt();
    let m = x.nrows();
    let batch = cfg.batch_size;
    let mut rng = shuffle_seed.rng();
    let mut order: Vec<usize> = (0..m).collect();
    let mut w = init;
    let mut state = crate::opt::AdamState::new(w.len());
    for epoch in 0..cfg.epochs {
        // Fisher-Yates shuffle, deterministic under the member seed.
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let lr = opt.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let xb = DMatrix::from_fn(chunk.len(), x.ncols(), |i, j| x[(chunk[i], j)]);
            let yb = DMatrix::from_fn(chunk.len(), y.ncols(), |i, j| y[(chunk[i], j)]);
            let p = ParamVector::from_values(spec, w.clone())?;
            let (loss, g) = p.backward(&xb, &yb, &LossSpec::SquaredError)?;
            epoch_loss += loss;
            state.step(&mut w, g.values(), lr, &opt);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "pre-training loss at epoch {epoch}"
            )));
        }
    }
    Ok(w)
}

/// Stage-1 product: anchors, their low-rank Gaussian, and diagnostics.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub anchors: Vec<ParamVector>,
    pub prior: LowRankGaussian,
    pub pretrain_rmse: Vec<f64>,
    pub init_token: u64,
}

/// Pre-train `k` members to fresh realizations of the functional prior and
/// extract the anchor prior. Members run in parallel with member-indexed
/// seeds, so scheduling cannot change the result.
pub fn pretrain_ensemble(
    spec: &NetworkSpec,
    priors: &[FunctionalPrior],
    k: usize,
    cfg: &PretrainConfig,
    truncation_tol: f64,
    master_seed: Seed,
) -> Result<Stage1> {
    if k < 2 {
        return Err(Error::InsufficientEnsemble { required: 2, got: k });
    }
    if priors.len() != spec.output_dim() {
        return Err(Error::InvalidPrior(format!(
            "{} output priors for a {}-output network",
            priors.len(),
            spec.output_dim()
        )));
    }
    for p in priors {
        p.validate(spec.input_dim())?;
    }
    let omega_init = ParamVector::he_init(spec, master_seed.member(Purpose::InitWeights, 0));
    let shared_points = if cfg.shared_points {
        Some(lhs_standard_normal(
            cfg.points,
            spec.input_dim(),
            master_seed.member(Purpose::PriorPoints, 0),
        )?)
    } else {
        None
    };
    let members: Vec<PretrainedMember> = (0..k)
        .into_par_iter()
        .map(|i| -> Result<PretrainedMember> {
            let points = match &shared_points {
                Some(p) => p.clone(),
                None => lhs_standard_normal(
                    cfg.points,
                    spec.input_dim(),
                    master_seed.member(Purpose::PriorPoints, i),
                )?,
            };
            let realization = sample_realization_joint(
                priors,
                &points,
                master_seed.member(Purpose::PriorRealization, i),
            )?;
            pretrain_member(
                &omega_init,
                &realization,
                cfg,
                master_seed.member(Purpose::Perturb, i),
            )
            .map_err(|e| Error::TrainingFailure {
                member: i,
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let prior = build_anchor_prior(&members, truncation_tol)?;
    Ok(Stage1 {
        pretrain_rmse: members.iter().map(|m| m.fit_rmse).collect(),
        init_token: members[0].init_token,
        anchors: members.into_iter().map(|m| m.weights).collect(),
        prior,
    })
}

/// Average the pre-trained weights and take the thin SVD of the centered
/// stack. Refuses mixed initializations: the ensemble mean is only
/// meaningful when every member started from the same shared weights.
pub fn build_anchor_prior(
    members: &[PretrainedMember],
    truncation_tol: f64,
) -> Result<LowRankGaussian> {
    if members.len() < 2 {
        return Err(Error::InsufficientEnsemble {
            required: 2,
            got: members.len(),
        });
    }
    let token = members[0].init_token;
    if let Some(bad) = members.iter().find(|m| m.init_token != token) {
        return Err(Error::SharedInitMismatch {
            expected: token,
            got: bad.init_token,
        });
    }
    let samples: Vec<DVector<f64>> = members.iter().map(|m| m.weights.values().clone()).collect();
    LowRankGaussian::from_samples(&samples, truncation_tol)
}

/// Pooled statistics of pre-trained weights: per-layer kernel variance,
/// generalized-normal shape fits, singular-value decay, and sample
/// correlations over a small coordinate subset.
#[derive(Debug, Clone)]
pub struct PriorStats {
    pub layers: Vec<LayerStats>,
    pub singular_values: Vec<f64>,
    pub correlation_indices: Vec<usize>,
    pub correlations: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerStats {
    pub layer: usize,
    pub kernel_variance: f64,
    pub kernel_gennorm_alpha: f64,
    pub kernel_gennorm_beta: f64,
    pub bias_variance: f64,
}

impl PriorStats {
    /// Kernel variance pooled over all layers.
    pub fn pooled_kernel_variance(&self, spec: &NetworkSpec) -> f64 {
        let layout = spec.layout();
        let total: usize = layout.iter().map(|b| b.weight_len()).sum();
        self.layers
            .iter()
            .zip(&layout)
            .map(|(l, b)| l.kernel_variance * b.weight_len() as f64)
            .sum::<f64>()
            / total as f64
    }

    /// Median over layers of the kernel shape parameter.
    pub fn median_kernel_beta(&self) -> f64 {
        let mut betas: Vec<f64> = self.layers.iter().map(|l| l.kernel_gennorm_beta).collect();
        betas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        betas[betas.len() / 2]
    }
}

/// Compute [`PriorStats`] from pre-trained weight vectors.
///
/// `correlation_indices` picks the coordinates whose pairwise sample
/// correlations are reported; `None` selects a small spread across layers.
pub fn compute_prior_stats(
    weights: &[ParamVector],
    truncation_tol: f64,
    correlation_indices: Option<Vec<usize>>,
) -> Result<PriorStats> {
    if weights.len() < 2 {
        return Err(Error::InsufficientEnsemble {
            required: 2,
            got: weights.len(),
        });
    }
    let spec = weights[0].spec().clone();
    let k = weights.len();
    let d = spec.param_count();
    // per-coordinate mean
    let mut mean = DVector::zeros(d);
    for w in weights {
        mean += w.values();
    }
    mean /= k as f64;

    let pooled = |offset: usize, len: usize| -> Vec<f64> {
        let mut vals = Vec::with_capacity(len * k);
        for w in weights {
            for j in offset..offset + len {
                vals.push(w.values()[j] - mean[j]);
            }
        }
        vals
    };

    let mut layers = Vec::new();
    for (l, block) in spec.layout().iter().enumerate() {
        let kernel = pooled(block.weight_offset, block.weight_len());
        let bias = pooled(block.bias_offset, block.fan_out);
        let (alpha, beta) = gennorm_mle(&kernel);
        layers.push(LayerStats {
            layer: l,
            kernel_variance: demeaned_variance(&kernel, k),
            kernel_gennorm_alpha: alpha,
            kernel_gennorm_beta: beta,
            bias_variance: demeaned_variance(&bias, k),
        });
    }

    let samples: Vec<DVector<f64>> = weights.iter().map(|w| w.values().clone()).collect();
    let lr = LowRankGaussian::from_samples(&samples, truncation_tol)?;

    let indices = correlation_indices.unwrap_or_else(|| default_correlation_subset(&spec));
    let correlations = sample_correlations(&samples, &mean, &indices);
    Ok(PriorStats {
        layers,
        singular_values: lr.singular_values().iter().copied().collect(),
        correlation_indices: indices,
        correlations,
    })
}

/// Unbiased pooled variance of already-demeaned entries: each coordinate
/// contributes K demeaned values, so the divisor is `n_coords * (K - 1)`.
fn demeaned_variance(demeaned: &[f64], k: usize) -> f64 {
    if demeaned.is_empty() || k < 2 {
        return 0.0;
    }
    let n_coords = demeaned.len() / k;
    demeaned.iter().map(|v| v * v).sum::<f64>() / (n_coords * (k - 1)) as f64
}

fn default_correlation_subset(spec: &NetworkSpec) -> Vec<usize> {
    // first two kernel entries of each layer, capped at 8 coordinates
    let mut idx = Vec::new();
    for block in spec.layout() {
        idx.push(block.weight_offset);
        if block.weight_len() > 1 {
            idx.push(block.weight_offset + block.weight_len() / 2);
        }
        if idx.len() >= 8 {
            break;
        }
    }
    idx.truncate(8);
    idx
}

fn sample_correlations(
    samples: &[DVector<f64>],
    mean: &DVector<f64>,
    indices: &[usize],
) -> DMatrix<f64> {
    let p = indices.len();
    let k = samples.len();
    let mut cov = DMatrix::zeros(p, p);
    for s in samples {
        for (a, &ia) in indices.iter().enumerate() {
            let da = s[ia] - mean[ia];
            for (b, &ib) in indices.iter().enumerate() {
                cov[(a, b)] += da * (s[ib] - mean[ib]);
            }
        }
    }
    cov /= (k - 1) as f64;
    let mut corr = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            let denom = (cov[(a, a)] * cov[(b, b)]).sqrt();
            corr[(a, b)] = if denom > 0.0 { cov[(a, b)] / denom } else { 0.0 };
        }
    }
    corr
}

/// Maximum-likelihood fit of a zero-mean generalized normal
/// `p(x) ∝ exp(-(|x|/alpha)^beta)` by a 1-D profile-likelihood search over
/// `beta`; for fixed `beta` the scale has the closed form
/// `alpha = (beta/n * sum |x|^beta)^(1/beta)`.
pub fn gennorm_mle(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let scale = xs.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return (0.0, 2.0);
    }
    let profile = |beta: f64| -> (f64, f64) {
        let mean_pow = xs.iter().map(|v| (v.abs() / scale).powf(beta)).sum::<f64>() / n;
        let alpha = scale * (beta * mean_pow).powf(1.0 / beta);
        // per-sample profile log-likelihood (constants in n dropped)
        let ll = beta.ln() - alpha.ln() - ln_gamma(1.0 / beta) - 1.0 / beta;
        (ll, alpha)
    };
    // golden-section maximization over ln(beta)
    let (mut lo, mut hi) = (0.2f64.ln(), 8.0f64.ln());
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = profile(x1.exp()).0;
    let mut f2 = profile(x2.exp()).0;
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = profile(x2.exp()).0;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = profile(x1.exp()).0;
        }
    }
    let beta = 0.5 * (lo + hi);
    let beta = beta.exp();
    let (_, alpha) = profile(beta);
    (alpha, beta)
}

/// Parameter-space prior families whose function-space footprint
/// [`reconstruct_functional`] compares.
#[derive(Debug, Clone)]
pub enum ParamPriorFamily<'a> {
    /// `N(0, sigma2 I_d)`.
    IsotropicZeroMean { sigma2: f64 },
    /// Independent Gaussians with per-coordinate variances.
    FactorizedGaussian {
        mean: &'a DVector<f64>,
        var: &'a DVector<f64>,
    },
    /// Independent generalized normals with per-coordinate scale/shape.
    FactorizedGenNorm {
        mean: &'a DVector<f64>,
        alpha: &'a DVector<f64>,
        beta: &'a DVector<f64>,
    },
    /// The full low-rank multivariate Gaussian.
    Multivariate(&'a LowRankGaussian),
}

/// Pointwise predictive band of a parameter-space prior family.
#[derive(Debug, Clone)]
pub struct ReconstructionBand {
    /// `(n_points, output_dim)` pointwise means.
    pub mean: DMatrix<f64>,
    /// `(n_points, output_dim)` pointwise standard deviations.
    pub std: DMatrix<f64>,
}

/// Sample parameter vectors from the family, push them through the
/// network, and report the pointwise predictive mean and deviation.
pub fn reconstruct_functional(
    family: &ParamPriorFamily<'_>,
    spec: &NetworkSpec,
    eval_points: &DMatrix<f64>,
    n_samples: usize,
    seed: Seed,
) -> Result<ReconstructionBand> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let d = spec.param_count();
    let n = eval_points.nrows();
    let out = spec.output_dim();
    let mut sum = DMatrix::zeros(n, out);
    let mut sum_sq = DMatrix::zeros(n, out);
    for s in 0..n_samples {
        let sample_seed = seed.member(Purpose::Reconstruct, s);
        let w = match family {
            ParamPriorFamily::IsotropicZeroMean { sigma2 } => {
                let mut rng = sample_seed.rng();
                let sd = sigma2.sqrt();
                DVector::from_fn(d, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
            }
            ParamPriorFamily::FactorizedGaussian { mean, var } => {
                check_len(d, mean.len())?;
                check_len(d, var.len())?;
                let mut rng = sample_seed.rng();
                DVector::from_fn(d, |i, _| {
                    mean[i] + var[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
                })
            }
            ParamPriorFamily::FactorizedGenNorm { mean, alpha, beta } => {
                check_len(d, mean.len())?;
                check_len(d, alpha.len())?;
                check_len(d, beta.len())?;
                let mut rng = sample_seed.rng();
                let mut w = DVector::zeros(d);
                for i in 0..d {
                    w[i] = mean[i] + sample_gennorm(alpha[i], beta[i], &mut rng);
                }
                w
            }
            ParamPriorFamily::Multivariate(prior) => {
                check_len(d, prior.dim())?;
                prior.sample(sample_seed)
            }
        };
        let p = ParamVector::from_values(spec, w)?;
        let y = p.forward_batch(eval_points)?;
        sum += &y;
        sum_sq += y.component_mul(&y);
    }
    let nf = n_samples as f64;
    let mean = sum / nf;
    let var = sum_sq / nf - mean.component_mul(&mean);
    let std = var.map(|v| v.max(0.0).sqrt());
    Ok(ReconstructionBand { mean, std })
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// Draw from a zero-mean generalized normal: `sign * alpha * G^(1/beta)`
/// with `G ~ Gamma(1/beta, 1)`.
fn sample_gennorm<R: Rng>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    let gamma = Gamma::new(1.0 / beta, 1.0).expect("gamma shape");
    let g: f64 = gamma.sample(rng);
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    sign * alpha * g.powf(1.0 / beta)
}

/// Expand per-layer kernel/bias statistics to a per-coordinate vector.
pub fn expand_per_layer(
    spec: &NetworkSpec,
    kernel_values: &[f64],
    bias_values: &[f64],
) -> DVector<f64> {
    let mut out = DVector::zeros(spec.param_count());
    for (l, block) in spec.layout().iter().enumerate() {
        for j in 0..block.weight_len() {
            out[block.weight_offset + j] = kernel_values[l];
        }
        for j in 0..block.fan_out {
            out[block.bias_offset + j] = bias_values[l];
        }
    }
    out
}
