//! Two-branch multimodal network.
//!
//! Each modality gets an MLP encoder with a projection head (unit embeddings
//! for contrastive pretraining) and a unimodal regression head. A fusion head
//! consumes the concatenated encoder outputs and produces the multimodal
//! prediction. Encoder parameters form the "shared" set that receives
//! modulated gradients during joint training; projection, unimodal and fusion
//! parameters are heads.
//!
//! The forward pass runs per sample, so outputs never couple across a batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, EPS_NUM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub modality_dims: Vec<usize>,
    /// Hidden widths applied to every modality encoder (ReLU activations).
    pub encoder_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub fusion_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            modality_dims: vec![16, 8],
            encoder_hidden: vec![64, 64],
            embed_dim: 32,
            fusion_hidden: vec![32],
            seed: 7,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modality_dims.is_empty() || self.modality_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("modality dims must all be at least 1"));
        }
        if self.encoder_hidden.is_empty() || self.encoder_hidden.iter().any(|&d| d == 0) {
            return Err(Error::invalid("encoder widths must all be at least 1"));
        }
        if self.embed_dim == 0 {
            return Err(Error::invalid("embed_dim must be at least 1"));
        }
        if self.fusion_hidden.iter().any(|&d| d == 0) {
            return Err(Error::invalid("fusion widths must all be at least 1"));
        }
        Ok(())
    }
}

/// Which component owns a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamOwner {
    /// Shared encoder parameters (modulated during joint training).
    Encoder(usize),
    /// Projection, unimodal or fusion head parameters (never modulated).
    Head,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub owner: ParamOwner,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    encoders: Vec<Vec<Linear>>,
    proj: Vec<Linear>,
    uni: Vec<Linear>,
    fusion: Vec<Linear>,
    fusion_out: Linear,
}

#[derive(Clone, Debug)]
pub struct TwoBranchNet {
    pub arch: ArchSpec,
    pub params: Vec<Param>,
    layout: Layout,
}

/// Everything the losses need from one forward pass of the full network.
pub struct ForwardOut {
    /// Multimodal predictions, one sigmoid scalar per sample, shape `[1, B]`.
    pub pred_mm: Tensor,
    /// Per-modality unimodal predictions, each `[1, B]`.
    pub pred_uni: Vec<Tensor>,
    /// Per-modality, per-sample unit embeddings, each `[1, embed_dim]`.
    pub z: Vec<Vec<Tensor>>,
}

/// Forward output plus the tape leaves of every parameter, aligned with
/// `net.params`, for gradient extraction.
pub struct ForwardPass {
    pub out: ForwardOut,
    pub leaves: Vec<Tensor>,
}

/// Forward output of a single modality branch (stage-1 training).
pub struct UnimodalPass {
    pub pred: Tensor,
    pub z: Vec<Tensor>,
    /// Leaves only for the parameters of this branch.
    pub leaves: Vec<Option<Tensor>>,
}

impl TwoBranchNet {
    /// Xavier-uniform initialization, biases zero, deterministic in the seed.
    pub fn init(arch: &ArchSpec) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(arch.seed);
        let mut params = Vec::new();

        let push_linear = |params: &mut Vec<Param>,
                           rng: &mut ChaCha12Rng,
                           name: &str,
                           fan_in: usize,
                           fan_out: usize,
                           owner: ParamOwner|
         -> Linear {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            params.push(Param {
                name: format!("{name}.w"),
                shape: vec![fan_in, fan_out],
                value: w,
                owner,
            });
            let w_idx = params.len() - 1;
            params.push(Param {
                name: format!("{name}.b"),
                shape: vec![1, fan_out],
                value: vec![0.0; fan_out],
                owner,
            });
            Linear {
                w: w_idx,
                b: params.len() - 1,
            }
        };

        let mut encoders = Vec::new();
        let mut proj = Vec::new();
        let mut uni = Vec::new();
        for (k, &dim) in arch.modality_dims.iter().enumerate() {
            let mut layers = Vec::new();
            let mut fan_in = dim;
            for (i, &width) in arch.encoder_hidden.iter().enumerate() {
                layers.push(push_linear(
                    &mut params,
                    &mut rng,
                    &format!("enc{k}.l{i}"),
                    fan_in,
                    width,
                    ParamOwner::Encoder(k),
                ));
                fan_in = width;
            }
            encoders.push(layers);
            proj.push(push_linear(
                &mut params,
                &mut rng,
                &format!("proj{k}"),
                fan_in,
                arch.embed_dim,
                ParamOwner::Head,
            ));
            uni.push(push_linear(
                &mut params,
                &mut rng,
                &format!("uni{k}"),
                fan_in,
                1,
                ParamOwner::Head,
            ));
        }

        let enc_out: usize = *arch.encoder_hidden.last().unwrap();
        let mut fan_in = enc_out * arch.modality_dims.len();
        let mut fusion = Vec::new();
        for (i, &width) in arch.fusion_hidden.iter().enumerate() {
            fusion.push(push_linear(
                &mut params,
                &mut rng,
                &format!("fusion.l{i}"),
                fan_in,
                width,
                ParamOwner::Head,
            ));
            fan_in = width;
        }
        let fusion_out = push_linear(
            &mut params,
            &mut rng,
            "fusion.out",
            fan_in,
            1,
            ParamOwner::Head,
        );

        Ok(TwoBranchNet {
            arch: arch.clone(),
            params,
            layout: Layout {
                encoders,
                proj,
                uni,
                fusion,
                fusion_out,
            },
        })
    }

    pub fn shared_param_indices(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| matches!(self.params[i].owner, ParamOwner::Encoder(_)))
            .collect()
    }

    pub fn head_param_indices(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].owner == ParamOwner::Head)
            .collect()
    }

    /// Indices of every parameter in modality `k`'s branch (encoder,
    /// projection head, unimodal head).
    pub fn branch_param_indices(&self, k: usize) -> Vec<usize> {
        let mut idx = Vec::new();
        for l in &self.layout.encoders[k] {
            idx.push(l.w);
            idx.push(l.b);
        }
        idx.extend([self.layout.proj[k].w, self.layout.proj[k].b]);
        idx.extend([self.layout.uni[k].w, self.layout.uni[k].b]);
        idx
    }

    pub fn param_values(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_param_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::invalid("parameter count mismatch"));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if v.len() != p.value.len() {
                return Err(Error::invalid(format!(
                    "size mismatch for parameter {}",
                    p.name
                )));
            }
            p.value.clone_from(v);
        }
        Ok(())
    }

    fn validate_features(&self, features: &[Vec<Vec<f64>>]) -> Result<usize> {
        if features.len() != self.arch.modality_dims.len() {
            return Err(Error::invalid(format!(
                "expected {} modalities, got {}",
                self.arch.modality_dims.len(),
                features.len()
            )));
        }
        let batch = features[0].len();
        for (k, feats) in features.iter().enumerate() {
            if feats.len() != batch {
                return Err(Error::invalid("modalities disagree on batch size"));
            }
            for x in feats {
                if x.len() != self.arch.modality_dims[k] {
                    return Err(Error::ShapeMismatch {
                        op: "forward",
                        left: vec![x.len()],
                        right: vec![self.arch.modality_dims[k]],
                    });
                }
            }
        }
        if batch == 0 {
            return Err(Error::invalid("forward requires at least one sample"));
        }
        Ok(batch)
    }

    fn leaf_for(&self, tape: &Tape, idx: usize, values: &[Vec<f64>]) -> Result<Tensor> {
        let p = &self.params[idx];
        tape.leaf(Tensor::from_shape(p.shape.clone(), values[idx].clone())?)
    }

    fn linear(tape: &Tape, x: &Tensor, layer: Linear, leaves: &[Option<Tensor>]) -> Result<Tensor> {
        let w = leaves[layer.w].as_ref().expect("weight leaf present");
        let b = leaves[layer.b].as_ref().expect("bias leaf present");
        tape.add(&tape.matmul(x, w)?, b)
    }

    fn encode_sample(
        &self,
        tape: &Tape,
        k: usize,
        x: &[f64],
        leaves: &[Option<Tensor>],
    ) -> Result<Tensor> {
        let mut h = tape.leaf(Tensor::matrix(1, x.len(), x.to_vec())?)?;
        for &layer in &self.layout.encoders[k] {
            h = tape.relu(&Self::linear(tape, &h, layer, leaves)?)?;
        }
        Ok(h)
    }

    fn project_sample(
        &self,
        tape: &Tape,
        k: usize,
        h: &Tensor,
        leaves: &[Option<Tensor>],
    ) -> Result<Tensor> {
        let e = Self::linear(tape, h, self.layout.proj[k], leaves)?;
        let norm = tape.clamp_min(&tape.l2_norm(&e)?, EPS_NUM)?;
        tape.div(&e, &norm)
    }

    /// Full forward pass using this net's parameter values.
    pub fn forward(&self, tape: &Tape, features: &[Vec<Vec<f64>>]) -> Result<ForwardPass> {
        let values = self.param_values();
        self.forward_with(tape, features, &values)
    }

    /// Full forward pass with explicit parameter values (used by sharpness
    /// probing, which evaluates the loss at perturbed parameters).
    pub fn forward_with(
        &self,
        tape: &Tape,
        features: &[Vec<Vec<f64>>],
        values: &[Vec<f64>],
    ) -> Result<ForwardPass> {
        let mut leaves: Vec<Option<Tensor>> = Vec::with_capacity(self.params.len());
        for i in 0..self.params.len() {
            leaves.push(Some(self.leaf_for(tape, i, values)?));
        }
        let out = self.forward_from_leaves(tape, features, &leaves)?;
        Ok(ForwardPass {
            out,
            leaves: leaves.into_iter().map(|l| l.unwrap()).collect(),
        })
    }

    /// Forward pass over caller-provided parameter leaves (one per entry of
    /// `params`, in order). Lets gradient checkers own the tape leaves.
    pub fn forward_from_leaves(
        &self,
        tape: &Tape,
        features: &[Vec<Vec<f64>>],
        leaves: &[Option<Tensor>],
    ) -> Result<ForwardOut> {
        if leaves.len() != self.params.len() {
            return Err(Error::invalid("one leaf per parameter is required"));
        }
        let batch = self.validate_features(features)?;
        let k_total = self.arch.modality_dims.len();

        let mut pred_uni = Vec::with_capacity(k_total);
        let mut z = vec![Vec::with_capacity(batch); k_total];
        let mut hidden: Vec<Vec<Tensor>> = vec![Vec::with_capacity(batch); k_total];
        for k in 0..k_total {
            let mut preds = Vec::with_capacity(batch);
            for x in &features[k] {
                let h = self.encode_sample(tape, k, x, leaves)?;
                z[k].push(self.project_sample(tape, k, &h, leaves)?);
                let p = tape.sigmoid(&Self::linear(tape, &h, self.layout.uni[k], leaves)?)?;
                preds.push(p);
                hidden[k].push(h);
            }
            let refs: Vec<&Tensor> = preds.iter().collect();
            pred_uni.push(tape.concat(&refs)?);
        }

        let mut fused = Vec::with_capacity(batch);
        for s in 0..batch {
            let hs: Vec<&Tensor> = (0..k_total).map(|k| &hidden[k][s]).collect();
            let mut h = tape.concat(&hs)?;
            for &layer in &self.layout.fusion {
                h = tape.relu(&Self::linear(tape, &h, layer, leaves)?)?;
            }
            fused.push(tape.sigmoid(&Self::linear(tape, &h, self.layout.fusion_out, leaves)?)?);
        }
        let refs: Vec<&Tensor> = fused.iter().collect();
        let pred_mm = tape.concat(&refs)?;

        Ok(ForwardOut {
            pred_mm,
            pred_uni,
            z,
        })
    }

    /// Forward pass of one modality branch only (stage-1 pretraining).
    pub fn forward_unimodal(
        &self,
        tape: &Tape,
        features: &[Vec<f64>],
        k: usize,
    ) -> Result<UnimodalPass> {
        if k >= self.arch.modality_dims.len() {
            return Err(Error::invalid(format!("modality {k} out of range")));
        }
        if features.is_empty() {
            return Err(Error::invalid("forward requires at least one sample"));
        }
        for x in features {
            if x.len() != self.arch.modality_dims[k] {
                return Err(Error::ShapeMismatch {
                    op: "forward_unimodal",
                    left: vec![x.len()],
                    right: vec![self.arch.modality_dims[k]],
                });
            }
        }
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let values = self.param_values();
        for idx in self.branch_param_indices(k) {
            leaves[idx] = Some(self.leaf_for(tape, idx, &values)?);
        }

        let mut preds = Vec::with_capacity(features.len());
        let mut z = Vec::with_capacity(features.len());
        for x in features {
            let h = self.encode_sample(tape, k, x, &leaves)?;
            z.push(self.project_sample(tape, k, &h, &leaves)?);
            preds.push(tape.sigmoid(&Self::linear(tape, &h, self.layout.uni[k], &leaves)?)?);
        }
        let refs: Vec<&Tensor> = preds.iter().collect();
        Ok(UnimodalPass {
            pred: tape.concat(&refs)?,
            z,
            leaves,
        })
    }
}

/// Severity level codes for post-processing, most severe first.
pub const LEVEL_CODES: [i32; 4] = [-18, -12, -6, 1];

/// Rescales a normalized prediction back to the original target scale
/// via its severity level code.
pub fn postprocess(pred_norm: f64, level: i32) -> Result<f64> {
    if !LEVEL_CODES.contains(&level) {
        return Err(Error::invalid(format!(
            "unknown level code {level}, expected one of {LEVEL_CODES:?}"
        )));
    }
    Ok(pred_norm * level as f64)
}

/// Target-quartile boundaries mapping each sample to a severity level code.
///
/// The lowest quartile (most severe) maps to -18, then -12, -6, and the top
/// quartile to 1. Computed once from the training-split targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMap {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl LevelMap {
    pub fn from_targets(targets: &[f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::invalid("level map needs at least one target"));
        }
        let mut sorted = targets.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(LevelMap {
            q1: quantile(&sorted, 0.25),
            q2: quantile(&sorted, 0.50),
            q3: quantile(&sorted, 0.75),
        })
    }

    pub fn level_for(&self, target: f64) -> i32 {
        if target < self.q1 {
            -18
        } else if target < self.q2 {
            -12
        } else if target < self.q3 {
            -6
        } else {
            1
        }
    }

    /// Training target on the normalized [0, 1] scale: `clamp(y / level, 0, 1)`.
    pub fn normalized_target(&self, target: f64) -> f64 {
        (target / self.level_for(target) as f64).clamp(0.0, 1.0)
    }
}

/// Versioned parameter snapshot: name, shape, row-major values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub params: Vec<CheckpointParam>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

impl TwoBranchNet {
    /// Snapshot of the parameters selected by `keep`.
    pub fn to_checkpoint(&self, keep: impl Fn(&Param) -> bool) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            params: self
                .params
                .iter()
                .filter(|p| keep(p))
                .map(|p| CheckpointParam {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Loads every parameter present in the checkpoint; names and shapes must
    /// match the architecture.
    pub fn load_checkpoint(&mut self, cp: &Checkpoint) -> Result<()> {
        if cp.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
                cp.schema_version
            )));
        }
        for cpp in &cp.params {
            let p = self
                .params
                .iter_mut()
                .find(|p| p.name == cpp.name)
                .ok_or_else(|| {
                    Error::CheckpointMismatch(format!("unknown parameter {}", cpp.name))
                })?;
            if p.shape != cpp.shape {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    cpp.name, p.shape, cpp.shape
                )));
            }
            p.value.clone_from(&cpp.data);
        }
        Ok(())
    }
}

pub fn save_checkpoint(cp: &Checkpoint, path: &std::path::Path) -> Result<()> {
    let json = serde_json::to_string(cp)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let json = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&json)?)
}
