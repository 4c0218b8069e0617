//! Stage 2 and baselines: the three loss modes (vanilla, factorized
//! anchoring, correlated anchoring) and the ensemble training loops.
//!
//! The correlated loss carries no free regularization strength. The data
//! term is weighted by the known noise precision and the anchor term by the
//! `(K-1) S^{-2}` factors of the extracted prior, exactly the maximum a
//! posteriori objective — the balance between data and prior is embedded in
//! the estimated covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Scaling};
use crate::error::{Error, Result};
use crate::lowrank::{LowRankGaussian, DEFAULT_TRUNCATION_TOL};
use crate::nn::{LossSpec, NetworkSpec, ParamVector};
use crate::opt::{adam_minimize, LossParts, OptConfig, TraceRow};
use crate::prior::FunctionalPrior;
use crate::seed::{Purpose, Seed};
use crate::transfer::{compute_prior_stats, expand_per_layer, pretrain_ensemble, PretrainConfig, Stage1};

/// How each member is regularized during stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    /// No prior, fresh random initializations (Alg. 1 style baseline).
    Vanilla,
    /// Anchoring under an independent-coordinate Gaussian prior.
    Factorized { strength: FactorizedStrength },
    /// Anchoring under the low-rank correlated prior (the full algorithm).
    Correlated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorizedStrength {
    /// `lambda ||w - w0||^2` with anchors drawn from `N(0, I/lambda)`.
    ScalarLambda(f64),
    /// Per-layer variances pooled from the pre-trained ensemble; anchors
    /// drawn from the factorized density `prod_j N(mu0_j, sigma0_j^2)`.
    PerLayer,
}

impl Mode {
    pub fn factorized_per_layer() -> Mode {
        Mode::Factorized {
            strength: FactorizedStrength::PerLayer,
        }
    }

    pub fn needs_functional_prior(&self) -> bool {
        matches!(
            self,
            Mode::Correlated
                | Mode::Factorized {
                    strength: FactorizedStrength::PerLayer,
                }
        )
    }

    pub fn is_anchored(&self) -> bool {
        !matches!(self, Mode::Vanilla)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Likelihood,
    Bootstrap,
}

/// Full configuration of an ensemble training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub mode: Mode,
    pub ensemble_size: usize,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default)]
    pub stage2: OptConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default = "default_truncation")]
    pub truncation_tol: f64,
    /// Scaling to use; `None` fits it to the training data. Callers that
    /// build priors in scaled space fit the scaling first and pass it here.
    #[serde(default)]
    pub scaling: Option<Scaling>,
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION_TOL
}

impl TrainSettings {
    pub fn new(mode: Mode, ensemble_size: usize) -> Self {
        TrainSettings {
            mode,
            ensemble_size,
            resampling: Resampling::Likelihood,
            stage2: OptConfig::default(),
            pretrain: PretrainConfig::default(),
            truncation_tol: DEFAULT_TRUNCATION_TOL,
            scaling: None,
        }
    }

    pub fn vanilla(k: usize) -> Self {
        Self::new(Mode::Vanilla, k)
    }

    pub fn correlated(k: usize) -> Self {
        Self::new(Mode::Correlated, k)
    }

    pub fn factorized_per_layer(k: usize) -> Self {
        Self::new(Mode::factorized_per_layer(), k)
    }
}

/// Trained anchored-ensemble BNN.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub spec: NetworkSpec,
    pub mode: Mode,
    /// Trained members, in scaled function space.
    pub members: Vec<ParamVector>,
    /// Per-member anchors (empty in vanilla mode).
    pub anchors: Vec<ParamVector>,
    pub anchor_prior: Option<LowRankGaussian>,
    /// Diagonal noise covariance in raw output units.
    pub noise_var: DVector<f64>,
    pub scaling: Scaling,
}

impl EnsembleModel {
    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }
}

/// Training product: the model plus traces and stage-1 diagnostics.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: EnsembleModel,
    pub traces: Vec<Vec<TraceRow>>,
    pub pretrain_rmse: Vec<f64>,
}

/// Gaussian-likelihood data-fit term
/// `sum_i (y_i - f(x_i))^T Sigma_noise^{-1} (y_i - f(x_i))`.
pub fn data_fit_term(
    params: &ParamVector,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    noise_prec: &DVector<f64>,
) -> Result<f64> {
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let yhat = params.forward_batch(x)?;
    let mut loss = 0.0;
    for j in 0..y.ncols() {
        let p = noise_prec[j];
        for i in 0..y.nrows() {
            let r = yhat[(i, j)] - y[(i, j)];
            loss += p * r * r;
        }
    }
    Ok(loss)
}

/// Correlated anchor term `(K-1) ||S^{-1} V^T (w - w0)||^2`.
pub fn correlated_reg_term(
    w: &ParamVector,
    anchor: &ParamVector,
    prior: &LowRankGaussian,
) -> f64 {
    let diff = w.values() - anchor.values();
    prior.quadratic_and_grad(&diff).0
}

/// Factorized anchor term `sum_j (w_j - w0_j)^2 / sigma0_j^2`, expressed
/// with per-coordinate precisions (`inv_var = lambda` uniformly recovers
/// the scalar form).
pub fn factorized_reg_term(
    w: &ParamVector,
    anchor: &ParamVector,
    inv_var: &DVector<f64>,
) -> f64 {
    let mut q = 0.0;
    for i in 0..w.len() {
        let dlt = w.values()[i] - anchor.values()[i];
        q += inv_var[i] * dlt * dlt;
    }
    q
}

/// Regularizer attached to one member's stage-2 objective.
#[derive(Debug, Clone)]
pub enum RegTerm<'a> {
    None,
    Factorized {
        anchor: &'a ParamVector,
        inv_var: &'a DVector<f64>,
    },
    Correlated {
        anchor: &'a ParamVector,
        prior: &'a LowRankGaussian,
    },
}

/// Fit one member: minimize data fit plus its anchor term, full batch.
///
/// `x`/`y` are in scaled units and already resampled for this member.
/// An empty batch trains against the prior alone; with the anchor as the
/// initial point that leaves the member exactly at its anchor.
pub fn train_member(
    member_index: usize,
    init: &ParamVector,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    noise_prec: &DVector<f64>,
    reg: &RegTerm<'_>,
    opt: &OptConfig,
) -> Result<(ParamVector, Vec<TraceRow>)> {
    let spec = init.spec().clone();
    let has_data = x.nrows() > 0;
    let result = adam_minimize(
        init.values().clone(),
        |w, grad| {
            let p = ParamVector::from_values(&spec, w.clone())?;
            let data_fit = if has_data {
                let (loss, g) = p.backward(
                    x,
                    y,
                    &LossSpec::WeightedSquaredError { noise_prec },
                )?;
                grad.copy_from(g.values());
                loss
            } else {
                grad.fill(0.0);
                0.0
            };
            let reg_value = match reg {
                RegTerm::None => 0.0,
                RegTerm::Factorized { anchor, inv_var } => {
                    let mut q = 0.0;
                    for i in 0..w.len() {
                        let dlt = w[i] - anchor.values()[i];
                        q += inv_var[i] * dlt * dlt;
                        grad[i] += 2.0 * inv_var[i] * dlt;
                    }
                    q
                }
                RegTerm::Correlated { anchor, prior } => {
                    let diff = w - anchor.values();
                    let (q, g) = prior.quadratic_and_grad(&diff);
                    *grad += g;
                    q
                }
            };
            Ok(LossParts {
                data_fit,
                reg: reg_value,
            })
        },
        opt,
    );
    match result {
        Ok((values, trace)) => Ok((ParamVector::from_values(&spec, values)?, trace)),
        Err(e) => Err(Error::TrainingFailure {
            member: member_index,
            detail: e.to_string(),
        }),
    }
}

/// Train a full ensemble: stage 1 (when the mode calls for it) followed by
/// per-member stage-2 fits on resampled data.
///
/// Members train concurrently; every random draw is keyed by member index,
/// so the result is identical under any scheduling.
pub fn train_ensemble(
    spec: &NetworkSpec,
    data: &Dataset,
    priors: Option<&[FunctionalPrior]>,
    settings: &TrainSettings,
    master_seed: Seed,
) -> Result<TrainReport> {
    validate_settings(spec, data, settings)?;
    let stage1 = if settings.mode.needs_functional_prior() {
        let priors = priors.ok_or_else(|| {
            Error::Config("anchored mode requires a functional prior".into())
        })?;
        Some(pretrain_ensemble(
            spec,
            priors,
            settings.ensemble_size,
            &settings.pretrain,
            settings.truncation_tol,
            master_seed,
        )?)
    } else {
        None
    };
    train_ensemble_stage2(spec, data, stage1.as_ref(), settings, master_seed)
}

/// Stage 2 alone, reusing a cached stage-1 product (e.g. loaded from an
/// anchor-prior file).
pub fn train_ensemble_stage2(
    spec: &NetworkSpec,
    data: &Dataset,
    stage1: Option<&Stage1>,
    settings: &TrainSettings,
    master_seed: Seed,
) -> Result<TrainReport> {
    validate_settings(spec, data, settings)?;
    let k = settings.ensemble_size;
    let scaling = match &settings.scaling {
        Some(s) => s.clone(),
        None if data.is_empty() => Scaling::identity(data.input_dim(), data.output_dim()),
        None => Scaling::fit(data)?,
    };
    let sdata = data.scaled(&scaling);
    let noise_prec = DVector::from_fn(sdata.noise_var().len(), |j, _| 1.0 / sdata.noise_var()[j]);

    // Per-mode anchors, initial points and regularizers.
    let (anchors, anchor_prior, inv_var): (Vec<ParamVector>, Option<LowRankGaussian>, Option<DVector<f64>>) =
        match &settings.mode {
            Mode::Vanilla => (Vec::new(), None, None),
            Mode::Correlated => {
                let s1 = stage1.ok_or_else(|| {
                    Error::Config("correlated mode requires stage-1 pre-training".into())
                })?;
                if s1.anchors.len() != k {
                    return Err(Error::Config(format!(
                        "stage-1 ensemble has {} members, settings ask for {k}",
                        s1.anchors.len()
                    )));
                }
                (s1.anchors.clone(), Some(s1.prior.clone()), None)
            }
            Mode::Factorized { strength } => match strength {
                FactorizedStrength::ScalarLambda(lambda) => {
                    if *lambda <= 0.0 {
                        return Err(Error::Config(format!(
                            "scalar anchoring strength must be positive, got {lambda}"
                        )));
                    }
                    let sd = (1.0 / lambda).sqrt();
                    let anchors = (0..k)
                        .map(|i| {
                            let mut rng = master_seed.member(Purpose::AnchorDraw, i).rng();
                            let values = DVector::from_fn(spec.param_count(), |_, _| {
                                sd * rng.sample::<f64, _>(StandardNormal)
                            });
                            ParamVector::from_values(spec, values)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (
                        anchors,
                        None,
                        Some(DVector::from_element(spec.param_count(), *lambda)),
                    )
                }
                FactorizedStrength::PerLayer => {
                    let s1 = stage1.ok_or_else(|| {
                        Error::Config("per-layer factorized mode requires stage-1 pre-training".into())
                    })?;
                    let stats = compute_prior_stats(&s1.anchors, settings.truncation_tol, None)?;
                    let kernel_vars: Vec<f64> =
                        stats.layers.iter().map(|l| l.kernel_variance).collect();
                    let bias_vars: Vec<f64> =
                        stats.layers.iter().map(|l| l.bias_variance).collect();
                    let var = expand_per_layer(spec, &kernel_vars, &bias_vars);
                    if var.iter().any(|&v| v <= 0.0) {
                        return Err(Error::Domain(
                            "factorized prior needs strictly positive per-layer variances".into(),
                        ));
                    }
                    let mu0 = s1.prior.mean().clone();
                    let anchors = (0..k)
                        .map(|i| {
                            let mut rng = master_seed.member(Purpose::AnchorDraw, i).rng();
                            let values = DVector::from_fn(spec.param_count(), |j, _| {
                                mu0[j] + var[j].sqrt() * rng.sample::<f64, _>(StandardNormal)
                            });
                            ParamVector::from_values(spec, values)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let inv_var = var.map(|v| 1.0 / v);
                    (anchors, None, Some(inv_var))
                }
            },
        };

    let member_results: Vec<(ParamVector, Vec<TraceRow>)> = (0..k)
        .into_par_iter()
        .map(|i| -> Result<(ParamVector, Vec<TraceRow>)> {
            let member_data = if sdata.is_empty() {
                sdata.clone()
            } else {
                match settings.resampling {
                    Resampling::Likelihood => {
                        sdata.resample_likelihood(master_seed.member(Purpose::Resample, i))
                    }
                    Resampling::Bootstrap => {
                        sdata.resample_bootstrap(master_seed.member(Purpose::Resample, i))?
                    }
                }
            };
            let init;
            let reg = match &settings.mode {
                Mode::Vanilla => {
                    init = ParamVector::he_init(spec, master_seed.member(Purpose::InitWeights, i));
                    RegTerm::None
                }
                Mode::Correlated => {
                    init = anchors[i].clone();
                    RegTerm::Correlated {
                        anchor: &anchors[i],
                        prior: anchor_prior.as_ref().unwrap(),
                    }
                }
                Mode::Factorized { .. } => {
                    init = anchors[i].clone();
                    RegTerm::Factorized {
                        anchor: &anchors[i],
                        inv_var: inv_var.as_ref().unwrap(),
                    }
                }
            };
            train_member(
                i,
                &init,
                member_data.x(),
                member_data.y(),
                &noise_prec,
                &reg,
                &settings.stage2,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut members = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    for (m, t) in member_results {
        members.push(m);
        traces.push(t);
    }
    Ok(TrainReport {
        model: EnsembleModel {
            spec: spec.clone(),
            mode: settings.mode.clone(),
            members,
            anchors,
            anchor_prior,
            noise_var: data.noise_var().clone(),
            scaling,
        },
        traces,
        pretrain_rmse: stage1.map(|s| s.pretrain_rmse.clone()).unwrap_or_default(),
    })
}

/// The prior-only (N = 0) model: members are the stage-1 anchors
/// themselves, untouched by data.
pub fn prior_only_model(
    spec: &NetworkSpec,
    stage1: &Stage1,
    noise_var: DVector<f64>,
    scaling: Scaling,
) -> EnsembleModel {
    EnsembleModel {
        spec: spec.clone(),
        mode: Mode::Correlated,
        members: stage1.anchors.clone(),
        anchors: stage1.anchors.clone(),
        anchor_prior: Some(stage1.prior.clone()),
        noise_var,
        scaling,
    }
}

fn validate_settings(spec: &NetworkSpec, data: &Dataset, settings: &TrainSettings) -> Result<()> {
    if settings.ensemble_size == 0 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    if settings.mode.is_anchored() && settings.ensemble_size < 2 {
        return Err(Error::Config(
            "anchored modes need an ensemble of at least 2".into(),
        ));
    }
    if data.input_dim() != spec.input_dim() || data.output_dim() != spec.output_dim() {
        return Err(Error::ShapeMismatch {
            expected: spec.input_dim(),
            got: data.input_dim(),
        });
    }
    Ok(())
}
