//! Checkpoint container: a text header plus an IEEE-754 little-endian
//! payload, shared by parameter, anchor-prior, and ensemble files.
//!
//! Layout:
//! ```text
//! ABNN1\n
//! {"kind":"...","meta":{...},"arrays":[{"name":"..","rows":r,"cols":c},..]}\n
//! <f64 LE payload, arrays concatenated in header order, row-major>
//! ```

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::Scaling;
use crate::error::{Error, Result};
use crate::lowrank::LowRankGaussian;
use crate::nn::{NetworkSpec, ParamVector};
use crate::seed::{Purpose, Seed};
use crate::train::{EnsembleModel, Mode};
use crate::transfer::Stage1;

const MAGIC: &str = "ABNN1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    rows: usize,
    cols: usize,
}

/// A parsed or under-construction checkpoint file.
#[derive(Debug)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    arrays: Vec<(String, DMatrix<f64>)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push_matrix(&mut self, name: &str, m: DMatrix<f64>) {
        self.arrays.push((name.to_string(), m));
    }

    pub fn push_vector(&mut self, name: &str, v: &DVector<f64>) {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.arrays.push((name.to_string(), m));
    }

    pub fn matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("array '{name}' missing")))
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.matrix(name)?;
        if m.ncols() != 1 {
            return Err(Error::Checkpoint(format!(
                "array '{name}' is {}x{}, expected a column vector",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(DVector::from_column_slice(m.as_slice()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, m)| ArrayInfo {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for (_, m) in &self.arrays {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_f64::<LittleEndian>(m[(i, j)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not an {MAGIC} container",
                path.display()
            )));
        }
        let mut header_line = String::new();
        r.read_line(&mut header_line)?;
        let header: Header = serde_json::from_str(header_line.trim_end())?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for info in &header.arrays {
            let mut m = DMatrix::zeros(info.rows, info.cols);
            for i in 0..info.rows {
                for j in 0..info.cols {
                    m[(i, j)] = r.read_f64::<LittleEndian>().map_err(|e| {
                        Error::Checkpoint(format!("truncated payload in '{}': {e}", info.name))
                    })?;
                }
            }
            arrays.push((info.name.clone(), m));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }
}

// --- parameter checkpoints ---------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ParamsMeta {
    spec: NetworkSpec,
}

pub fn save_params(params: &ParamVector, path: &Path) -> Result<()> {
    let meta = serde_json::to_value(ParamsMeta {
        spec: params.spec().clone(),
    })?;
    let mut c = Container::new("params", meta);
    c.push_vector("values", params.values());
    c.write(path)
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    let c = Container::read(path)?;
    if c.kind != "params" {
        return Err(Error::Checkpoint(format!("expected params, got {}", c.kind)));
    }
    let meta: ParamsMeta = serde_json::from_value(c.meta.clone())?;
    ParamVector::from_values(&meta.spec, c.vector("values")?)
}

// --- anchor-prior files --------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PriorMeta {
    /// Architecture hash, hex, checked when the prior is reused.
    spec_hash: String,
    /// Shared-initialization token of the pre-trained ensemble, hex.
    init_token: String,
    ensemble_size: usize,
    dim: usize,
    rank: usize,
    /// Final pre-training RMSE per member.
    pretrain_rmse: Vec<f64>,
}

/// Persist a stage-1 product: mean, right vectors, singular values and the
/// anchors themselves.
pub fn save_anchor_prior(stage1: &Stage1, spec: &NetworkSpec, path: &Path) -> Result<()> {
    let prior = &stage1.prior;
    let meta = serde_json::to_value(PriorMeta {
        spec_hash: format!("{:016x}", spec.content_hash()),
        init_token: format!("{:016x}", stage1.init_token),
        ensemble_size: prior.ensemble_size(),
        dim: prior.dim(),
        rank: prior.rank(),
        pretrain_rmse: stage1.pretrain_rmse.clone(),
    })?;
    let mut c = Container::new("anchor-prior", meta);
    c.push_vector("mean", prior.mean());
    c.push_matrix("right_vectors", prior.right_vectors().clone());
    c.push_vector("singular_values", prior.singular_values());
    let mut anchors = DMatrix::zeros(stage1.anchors.len(), prior.dim());
    for (i, a) in stage1.anchors.iter().enumerate() {
        anchors.row_mut(i).copy_from(&a.values().transpose());
    }
    c.push_matrix("anchors", anchors);
    c.write(path)
}

/// Load a stage-1 product, verifying it matches the target architecture.
pub fn load_anchor_prior(path: &Path, spec: &NetworkSpec) -> Result<Stage1> {
    let c = Container::read(path)?;
    if c.kind != "anchor-prior" {
        return Err(Error::Checkpoint(format!(
            "expected anchor-prior, got {}",
            c.kind
        )));
    }
    let meta: PriorMeta = serde_json::from_value(c.meta.clone())?;
    let expected = format!("{:016x}", spec.content_hash());
    if meta.spec_hash != expected {
        return Err(Error::Checkpoint(format!(
            "anchor prior was built for architecture {}, target is {}",
            meta.spec_hash, expected
        )));
    }
    let prior = LowRankGaussian::from_parts(
        c.vector("mean")?,
        c.matrix("right_vectors")?.clone(),
        c.vector("singular_values")?,
        meta.ensemble_size,
    )?;
    let anchors_m = c.matrix("anchors")?;
    let mut anchors = Vec::with_capacity(anchors_m.nrows());
    for i in 0..anchors_m.nrows() {
        anchors.push(ParamVector::from_values(
            spec,
            anchors_m.row(i).transpose(),
        )?);
    }
    let init_token = u64::from_str_radix(&meta.init_token, 16)
        .map_err(|e| Error::Checkpoint(format!("bad init token: {e}")))?;
    Ok(Stage1 {
        anchors,
        prior,
        pretrain_rmse: meta.pretrain_rmse,
        init_token,
    })
}

/// Build a stage-1 product from a bare prior by drawing fresh anchors from
/// it, for reuse flows where only the distribution was kept.
pub fn stage1_with_fresh_anchors(
    prior: LowRankGaussian,
    spec: &NetworkSpec,
    k: usize,
    init_token: u64,
    seed: Seed,
) -> Result<Stage1> {
    let anchors = (0..k)
        .map(|i| {
            ParamVector::from_values(spec, prior.sample(seed.member(Purpose::AnchorDraw, i)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage1 {
        anchors,
        prior,
        pretrain_rmse: Vec::new(),
        init_token,
    })
}

// --- ensemble checkpoints ------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleMeta {
    spec: NetworkSpec,
    mode: Mode,
    scaling: Scaling,
    ensemble_size: usize,
    has_anchors: bool,
    /// Anchor prior stored inline under the `prior_*` arrays.
    anchor_prior: Option<InlinePriorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InlinePriorMeta {
    ensemble_size: usize,
    rank: usize,
}

pub fn save_ensemble(model: &EnsembleModel, path: &Path) -> Result<()> {
    let meta = serde_json::to_value(EnsembleMeta {
        spec: model.spec.clone(),
        mode: model.mode.clone(),
        scaling: model.scaling.clone(),
        ensemble_size: model.members.len(),
        has_anchors: !model.anchors.is_empty(),
        anchor_prior: model.anchor_prior.as_ref().map(|p| InlinePriorMeta {
            ensemble_size: p.ensemble_size(),
            rank: p.rank(),
        }),
    })?;
    let mut c = Container::new("ensemble", meta);
    c.push_vector("noise_var", &model.noise_var);
    let d = model.spec.param_count();
    let stack = |vs: &[ParamVector]| {
        let mut m = DMatrix::zeros(vs.len(), d);
        for (i, v) in vs.iter().enumerate() {
            m.row_mut(i).copy_from(&v.values().transpose());
        }
        m
    };
    c.push_matrix("members", stack(&model.members));
    if !model.anchors.is_empty() {
        c.push_matrix("anchors", stack(&model.anchors));
    }
    if let Some(p) = &model.anchor_prior {
        c.push_vector("prior_mean", p.mean());
        c.push_matrix("prior_right_vectors", p.right_vectors().clone());
        c.push_vector("prior_singular_values", p.singular_values());
    }
    c.write(path)
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleModel> {
    let c = Container::read(path)?;
    if c.kind != "ensemble" {
        return Err(Error::Checkpoint(format!(
            "expected ensemble, got {}",
            c.kind
        )));
    }
    let meta: EnsembleMeta = serde_json::from_value(c.meta.clone())?;
    let unstack = |m: &DMatrix<f64>| -> Result<Vec<ParamVector>> {
        (0..m.nrows())
            .map(|i| ParamVector::from_values(&meta.spec, m.row(i).transpose()))
            .collect()
    };
    let members = unstack(c.matrix("members")?)?;
    if members.len() != meta.ensemble_size {
        return Err(Error::Checkpoint("member count mismatch".into()));
    }
    let anchors = if meta.has_anchors {
        unstack(c.matrix("anchors")?)?
    } else {
        Vec::new()
    };
    let anchor_prior = match &meta.anchor_prior {
        Some(p) => Some(LowRankGaussian::from_parts(
            c.vector("prior_mean")?,
            c.matrix("prior_right_vectors")?.clone(),
            c.vector("prior_singular_values")?,
            p.ensemble_size,
        )?),
        None => None,
    };
    Ok(EnsembleModel {
        spec: meta.spec,
        mode: meta.mode,
        members,
        anchors,
        anchor_prior,
        noise_var: c.vector("noise_var")?,
        scaling: meta.scaling,
    })
}

/// SHA-256 hex digest of a file's bytes, for artifact manifests.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}
