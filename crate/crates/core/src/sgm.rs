//! Sharpness-aware gradient modulation: the joint-training optimizer.
//!
//! Each step probes the local loss surface with normalized ascent/descent
//! perturbations to score its sharpness, normalizes that score against a
//! sliding window of recent scores to get the modulation factor gamma,
//! collects per-objective gradients, Pareto-integrates the multimodal and
//! aggregated unimodal gradients on the shared encoder parameters, rescales
//! the integrated direction to the baseline gradient magnitude times gamma,
//! and applies a bias-corrected Adam update.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_similarity, Tape, Tensor, EPS_NUM};
use crate::error::{Error, Result};
use crate::losses::{regression_loss, LossWeights};
use crate::minnorm::{select_weights, ParetoWeights};
use crate::model::{ForwardPass, TwoBranchNet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgmConfig {
    pub gamma_base: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Radius of the sharpness probe (the perturbation scale).
    pub eps_probe: f64,
    /// Normalized ascent/descent steps per probe direction.
    pub probe_steps: usize,
    pub window_len: usize,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Pins the Pareto weights to (0.5, 0.5); used by reduction checks.
    pub force_uniform_weights: bool,
}

impl Default for SgmConfig {
    fn default() -> Self {
        SgmConfig {
            gamma_base: 1.0,
            gamma_min: 0.5,
            gamma_max: 15.0,
            eps_probe: 0.05,
            probe_steps: 1,
            window_len: 20,
            eta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            force_uniform_weights: false,
        }
    }
}

impl SgmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_min > 0.0
            && self.gamma_min <= self.gamma_base
            && self.gamma_base <= self.gamma_max)
        {
            return Err(Error::invalid(
                "gamma bounds must satisfy 0 < gamma_min <= gamma_base <= gamma_max",
            ));
        }
        if self.window_len == 0 {
            return Err(Error::invalid("window_len must be at least 1"));
        }
        if !(self.eps_probe > 0.0) || self.probe_steps == 0 {
            return Err(Error::invalid(
                "probe requires eps_probe > 0 and probe_steps >= 1",
            ));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Ring buffer of recent sharpness scores.
#[derive(Clone, Debug)]
pub struct SharpnessWindow {
    buf: VecDeque<f64>,
    cap: usize,
}

impl SharpnessWindow {
    pub fn new(cap: usize) -> Self {
        SharpnessWindow {
            buf: VecDeque::with_capacity(cap),
            cap: cap.max(1),
        }
    }

    pub fn push(&mut self, s: f64) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(s);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Median of the stored scores; an even-length window averages the two
    /// central values.
    pub fn median(&self) -> Option<f64> {
        if self.buf.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = self.buf.iter().copied().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        Some(if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        })
    }
}

/// A scalar loss with gradients, evaluable at arbitrary parameter values.
pub trait DifferentiableLoss {
    fn loss(&mut self, params: &[Vec<f64>]) -> Result<f64>;
    fn loss_and_grad(&mut self, params: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)>;
}

fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Unguarded cosine for contract diagnostics; the epsilon in
/// [`cosine_similarity`] would already exceed the 1e-9 direction budget.
pub fn exact_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// Sharpness score `L(theta+) - L(theta-)` from `probe_steps` normalized
/// ascent and descent steps of radius `eps_probe`. Works on copies, so the
/// caller's parameters are untouched.
pub fn probe_sharpness(
    f: &mut dyn DifferentiableLoss,
    theta: &[Vec<f64>],
    cfg: &SgmConfig,
) -> Result<f64> {
    cfg.validate()?;
    let walk = |f: &mut dyn DifferentiableLoss, sign: f64| -> Result<f64> {
        let mut cur: Vec<Vec<f64>> = theta.to_vec();
        for _ in 0..cfg.probe_steps {
            let (_, grads) = f.loss_and_grad(&cur)?;
            let scale = sign * cfg.eps_probe / (global_norm(&grads) + EPS_NUM);
            for (c, g) in cur.iter_mut().zip(&grads) {
                for (cv, gv) in c.iter_mut().zip(g) {
                    *cv += scale * gv;
                }
            }
        }
        f.loss(&cur)
    };
    let l_plus = walk(f, 1.0)?;
    let l_minus = walk(f, -1.0)?;
    let s = l_plus - l_minus;
    if !s.is_finite() {
        return Err(Error::NonFinite("sharpness probe".into()));
    }
    Ok(s)
}

/// Inserts the (non-negative part of the) score into the window, then
/// normalizes it by the window median and clips to the gamma range.
pub fn compute_gamma(window: &mut SharpnessWindow, s_t: f64, cfg: &SgmConfig) -> Result<f64> {
    if !s_t.is_finite() {
        return Err(Error::NonFinite("sharpness score".into()));
    }
    let s = s_t.max(0.0);
    window.push(s);
    let median = window.median().expect("window non-empty after push");
    let raw = cfg.gamma_base * s / median.max(EPS_NUM);
    Ok(raw.clamp(cfg.gamma_min, cfg.gamma_max))
}

/// Per-objective gradients on the shared encoder parameters plus head
/// gradients from the total loss.
#[derive(Clone, Debug)]
pub struct GradBundle {
    pub shared_idx: Vec<usize>,
    pub g_mm: Vec<Vec<f64>>,
    pub g_uni: Vec<Vec<f64>>,
    pub g_base: Vec<Vec<f64>>,
    pub head_idx: Vec<usize>,
    pub g_head: Vec<Vec<f64>>,
}

impl GradBundle {
    pub fn flat_mm(&self) -> Vec<f64> {
        self.g_mm.iter().flatten().copied().collect()
    }

    pub fn flat_uni(&self) -> Vec<f64> {
        self.g_uni.iter().flatten().copied().collect()
    }
}

fn grads_for(
    tape: &Tape,
    loss: &Tensor,
    leaves: &[Tensor],
    idx: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let grads = tape.backward(loss)?;
    idx.iter()
        .map(|&i| grads.wrt(&leaves[i]).map(|t| t.data().to_vec()))
        .collect()
}

/// Backpropagates each loss in isolation: the multimodal loss, every
/// unimodal loss (summed into `g_uni`), and the total loss for the baseline
/// norms and head gradients.
pub fn collect_gradients(
    tape: &Tape,
    net: &TwoBranchNet,
    pass: &ForwardPass,
    loss_mm: &Tensor,
    loss_uni: &[Tensor],
    loss_total: &Tensor,
) -> Result<GradBundle> {
    if pass.leaves.len() != net.params.len() {
        return Err(Error::invalid(format!(
            "forward pass covers {} parameters but the registry has {}",
            pass.leaves.len(),
            net.params.len()
        )));
    }
    let shared_idx = net.shared_param_indices();
    let head_idx = net.head_param_indices();

    let g_mm = grads_for(tape, loss_mm, &pass.leaves, &shared_idx)?;
    let mut g_uni: Vec<Vec<f64>> = shared_idx
        .iter()
        .map(|&i| vec![0.0; net.params[i].value.len()])
        .collect();
    for lu in loss_uni {
        let gk = grads_for(tape, lu, &pass.leaves, &shared_idx)?;
        for (acc, g) in g_uni.iter_mut().zip(&gk) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    let g_base = grads_for(tape, loss_total, &pass.leaves, &shared_idx)?;
    let g_head = grads_for(tape, loss_total, &pass.leaves, &head_idx)?;

    Ok(GradBundle {
        shared_idx,
        g_mm,
        g_uni,
        g_base,
        head_idx,
        g_head,
    })
}

/// Pareto-integrates the shared gradients and rescales each block to the
/// baseline magnitude times gamma:
/// `g_i = 2a_mm g_i^mm + 2a_uni g_i^uni`, then
/// `out_i = gamma * ||g_i^base|| / (||g_i|| + eps) * g_i`.
pub fn integrate_rescale(bundle: &GradBundle, weights: ParetoWeights, gamma: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(bundle.g_mm.len());
    for ((gm, gu), gb) in bundle.g_mm.iter().zip(&bundle.g_uni).zip(&bundle.g_base) {
        let g: Vec<f64> = gm
            .iter()
            .zip(gu)
            .map(|(m, u)| 2.0 * weights.alpha_mm * m + 2.0 * weights.alpha_uni * u)
            .collect();
        let norm_g = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_base = gb.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = gamma * norm_base / (norm_g + EPS_NUM);
        out.push(g.into_iter().map(|v| v * scale).collect());
    }
    out
}

/// Bias-corrected Adam moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_net(net: &TwoBranchNet) -> Self {
        let sizes: Vec<usize> = net.params.iter().map(|p| p.value.len()).collect();
        AdamState::new(&sizes)
    }
}

/// One Adam step over all tensors; `grads[i] = None` leaves tensor `i` (and
/// its moments) untouched. The step counter advances exactly once per call.
pub fn adam_update(
    state: &mut AdamState,
    values: &mut [Vec<f64>],
    grads: &[Option<Vec<f64>>],
    cfg: &SgmConfig,
) -> Result<()> {
    if values.len() != state.m.len() || grads.len() != values.len() {
        return Err(Error::invalid("adam state, values and grads must align"));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..values.len() {
        let g = match &grads[i] {
            Some(g) => g,
            None => continue,
        };
        if g.len() != values[i].len() {
            return Err(Error::invalid(format!(
                "gradient size mismatch on tensor {i}"
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..g.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            values[i][j] -= cfg.eta * m_hat / (v_hat.sqrt() + EPS_NUM);
        }
    }
    Ok(())
}

/// Mutable optimizer state across joint-training steps.
#[derive(Clone, Debug)]
pub struct SgmState {
    pub window: SharpnessWindow,
    pub adam: AdamState,
}

impl SgmState {
    pub fn new(net: &TwoBranchNet, cfg: &SgmConfig) -> Self {
        SgmState {
            window: SharpnessWindow::new(cfg.window_len),
            adam: AdamState::for_net(net),
        }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

/// One line of the step log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub s_t: f64,
    pub gamma: f64,
    pub cos_beta: f64,
    pub alpha_mm: f64,
    pub loss_mm: f64,
    pub loss_uni: Vec<f64>,
}

/// Per-block modulation quantities for contract checking (not logged).
#[derive(Clone, Debug)]
pub struct BlockDiagnostics {
    pub norm_integrated: f64,
    pub norm_base: f64,
    pub norm_out: f64,
    /// Cosine between the rescaled output and the integrated direction.
    pub cos_out_vs_integrated: f64,
}

#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub blocks: Vec<BlockDiagnostics>,
}

/// The joint objective `l_mm + sum_k l_uni_k` on one minibatch, as a
/// differentiable function of all network parameters.
pub struct JointBatchLoss<'a> {
    pub net: &'a TwoBranchNet,
    pub features: &'a [Vec<Vec<f64>>],
    pub targets_norm: &'a [f64],
    pub weights: LossWeights,
}

impl JointBatchLoss<'_> {
    fn build(
        &self,
        tape: &Tape,
        params: &[Vec<f64>],
    ) -> Result<(ForwardPass, Tensor, Vec<Tensor>, Tensor)> {
        let pass = self.net.forward_with(tape, self.features, params)?;
        let loss_mm = regression_loss(tape, &pass.out.pred_mm, self.targets_norm, &self.weights)?;
        let mut loss_uni = Vec::with_capacity(pass.out.pred_uni.len());
        for pu in &pass.out.pred_uni {
            loss_uni.push(regression_loss(tape, pu, self.targets_norm, &self.weights)?);
        }
        let mut total = loss_mm.clone();
        for lu in &loss_uni {
            total = tape.add(&total, lu)?;
        }
        Ok((pass, loss_mm, loss_uni, total))
    }
}

impl DifferentiableLoss for JointBatchLoss<'_> {
    fn loss(&mut self, params: &[Vec<f64>]) -> Result<f64> {
        let tape = Tape::new();
        let (_, _, _, total) = self.build(&tape, params)?;
        total.item()
    }

    fn loss_and_grad(&mut self, params: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let tape = Tape::new();
        let (pass, _, _, total) = self.build(&tape, params)?;
        let grads = tape.backward(&total)?;
        let g = pass
            .leaves
            .iter()
            .map(|l| grads.wrt(l).map(|t| t.data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok((total.item()?, g))
    }
}

/// Executes one full modulated step: probe, gamma, per-objective gradient
/// collection, Pareto weighting, integration and rescaling on the shared
/// parameters (heads pass through), and the Adam update.
pub fn sgm_step(
    net: &mut TwoBranchNet,
    features: &[Vec<Vec<f64>>],
    targets_norm: &[f64],
    weights: &LossWeights,
    state: &mut SgmState,
    cfg: &SgmConfig,
) -> Result<(StepReport, StepDiagnostics)> {
    cfg.validate()?;
    let theta = net.param_values();

    // Step 1: sharpness estimation on the current minibatch loss.
    let mut surface = JointBatchLoss {
        net,
        features,
        targets_norm,
        weights: *weights,
    };
    let s_t = probe_sharpness(&mut surface, &theta, cfg)?;
    let gamma = compute_gamma(&mut state.window, s_t, cfg)?;

    // Step 2: per-objective gradients on one tape.
    let tape = Tape::new();
    let surface = JointBatchLoss {
        net,
        features,
        targets_norm,
        weights: *weights,
    };
    let (pass, loss_mm, loss_uni, total) = surface.build(&tape, &theta)?;
    let bundle = collect_gradients(&tape, net, &pass, &loss_mm, &loss_uni, &total)?;

    // Step 3: Pareto weighting from the conflict test.
    let flat_mm = bundle.flat_mm();
    let flat_uni = bundle.flat_uni();
    let cos_beta = cosine_similarity(&flat_mm, &flat_uni)?;
    let pareto = if cfg.force_uniform_weights {
        ParetoWeights::uniform()
    } else {
        select_weights(&flat_mm, &flat_uni)?
    };

    // Steps 4-5: integration and baseline-norm rescaling.
    let modulated = integrate_rescale(&bundle, pareto, gamma);
    let blocks = bundle
        .g_mm
        .iter()
        .zip(&bundle.g_uni)
        .zip(&bundle.g_base)
        .zip(&modulated)
        .map(|(((gm, gu), gb), out)| {
            let g: Vec<f64> = gm
                .iter()
                .zip(gu)
                .map(|(m, u)| 2.0 * pareto.alpha_mm * m + 2.0 * pareto.alpha_uni * u)
                .collect();
            BlockDiagnostics {
                norm_integrated: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
                norm_base: gb.iter().map(|v| v * v).sum::<f64>().sqrt(),
                norm_out: out.iter().map(|v| v * v).sum::<f64>().sqrt(),
                cos_out_vs_integrated: exact_cosine(out, &g),
            }
        })
        .collect();

    // Step 6: Adam update, modulated gradients on shared parameters and raw
    // total-loss gradients on heads.
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; net.params.len()];
    for (slot, g) in bundle.shared_idx.iter().zip(modulated) {
        grads[*slot] = Some(g);
    }
    for (slot, g) in bundle.head_idx.iter().zip(bundle.g_head.iter()) {
        grads[*slot] = Some(g.clone());
    }
    let mut values = theta;
    adam_update(&mut state.adam, &mut values, &grads, cfg)?;
    net.set_param_values(&values)?;

    let report = StepReport {
        step: state.adam.step,
        s_t,
        gamma,
        cos_beta,
        alpha_mm: pareto.alpha_mm,
        loss_mm: loss_mm.item()?,
        loss_uni: loss_uni
            .iter()
            .map(|l| l.item())
            .collect::<Result<Vec<_>>>()?,
    };
    Ok((report, StepDiagnostics { blocks }))
}

/// Plain joint Adam on the total loss; the baseline the modulated optimizer
/// reduces to when gamma is pinned and the weights are uniform.
pub fn joint_adam_step(
    net: &mut TwoBranchNet,
    features: &[Vec<Vec<f64>>],
    targets_norm: &[f64],
    weights: &LossWeights,
    adam: &mut AdamState,
    cfg: &SgmConfig,
) -> Result<StepReport> {
    let theta = net.param_values();
    let tape = Tape::new();
    let surface = JointBatchLoss {
        net,
        features,
        targets_norm,
        weights: *weights,
    };
    let (pass, loss_mm, loss_uni, total) = surface.build(&tape, &theta)?;
    let grads = tape.backward(&total)?;
    let g: Vec<Option<Vec<f64>>> = pass
        .leaves
        .iter()
        .map(|l| grads.wrt(l).map(|t| Some(t.data().to_vec())))
        .collect::<Result<Vec<_>>>()?;
    let mut values = theta;
    adam_update(adam, &mut values, &g, cfg)?;
    net.set_param_values(&values)?;
    Ok(StepReport {
        step: adam.step,
        s_t: 0.0,
        gamma: 1.0,
        cos_beta: 0.0,
        alpha_mm: 0.5,
        loss_mm: loss_mm.item()?,
        loss_uni: loss_uni
            .iter()
            .map(|l| l.item())
            .collect::<Result<Vec<_>>>()?,
    })
}
