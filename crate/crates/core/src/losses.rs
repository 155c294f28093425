//! Training losses: the adaptive-margin supervised contrastive loss, the
//! SMAPE + R² regression loss, and the combined stage-1 objective.
//!
//! The contrastive margin partitions a batch by label distance and tightens
//! over time, so early training pulls broad neighborhoods together while late
//! training separates near-boundary samples.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, EPS_NUM};
use crate::error::{Error, Result};

/// Time-dependent contrastive margin: constant `m0` for `t < t_n`, then
/// exponential decay at rate `beta` per iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSchedule {
    pub m0: f64,
    pub beta: f64,
    pub t_n: u64,
}

impl Default for MarginSchedule {
    fn default() -> Self {
        MarginSchedule {
            m0: 0.4,
            beta: 0.0005,
            t_n: 100,
        }
    }
}

pub fn margin_at(t: u64, s: &MarginSchedule) -> f64 {
    if t < s.t_n {
        s.m0
    } else {
        s.m0 * (-s.beta * (t - s.t_n) as f64).exp()
    }
}

/// Per-anchor positive and negative index sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchPartition {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl BatchPartition {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn has_any_positive(&self) -> bool {
        self.positives.iter().any(|p| !p.is_empty())
    }
}

/// Splits a batch by label distance: `|y_i - y_j| < m` is positive, `>= m`
/// negative, with the anchor itself excluded from both sets.
pub fn partition(labels: &[f64], m: f64) -> Result<BatchPartition> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid(format!(
            "margin must be positive and finite, got {m}"
        )));
    }
    let n = labels.len();
    let mut positives = vec![Vec::new(); n];
    let mut negatives = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if (labels[i] - labels[j]).abs() < m {
                positives[i].push(j);
            } else {
                negatives[i].push(j);
            }
        }
    }
    Ok(BatchPartition {
        positives,
        negatives,
    })
}

/// Loss composition knobs shared by both stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_supcon: f64,
    pub w_smape: f64,
    pub w_r2: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_supcon: 0.1,
            w_smape: 1.0,
            w_r2: 1.0,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid("temperature tau must be positive"));
        }
        if self.lambda_supcon < 0.0 {
            return Err(Error::invalid("lambda_supcon must be non-negative"));
        }
        Ok(())
    }
}

/// Supervised contrastive loss over unit embeddings.
///
/// For each anchor with at least one positive:
/// `-(1/|P|) sum_p log( exp(z_i.z_p / tau) / sum_{a != i} exp(z_i.z_a / tau) )`,
/// averaged over those anchors. Anchors without positives are excluded.
pub fn supcon_loss(tape: &Tape, z: &[Tensor], part: &BatchPartition, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature tau must be positive"));
    }
    if part.len() != z.len() {
        return Err(Error::invalid(format!(
            "partition covers {} anchors but batch has {} embeddings",
            part.len(),
            z.len()
        )));
    }
    for (i, zi) in z.iter().enumerate() {
        let norm: f64 = zi.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "embedding {i} is not unit-normalized (norm {norm})"
            )));
        }
    }

    let n = z.len();
    if n < 2 || !part.has_any_positive() {
        return tape.leaf(Tensor::scalar(0.0));
    }

    // Pairwise similarities z_i . z_a / tau, computed once per ordered pair.
    let mut sims: Vec<Vec<Option<Tensor>>> = vec![vec![None; n]; n];
    for i in 0..n {
        for a in 0..n {
            if i == a {
                continue;
            }
            let d = tape.dot(&z[i], &z[a])?;
            sims[i][a] = Some(tape.scale(&d, 1.0 / tau)?);
        }
    }

    let mut anchor_losses = Vec::new();
    for i in 0..n {
        let pos = &part.positives[i];
        if pos.is_empty() {
            continue;
        }
        let exps: Vec<Tensor> = (0..n)
            .filter(|&a| a != i)
            .map(|a| tape.exp(sims[i][a].as_ref().unwrap()))
            .collect::<Result<Vec<_>>>()?;
        let exp_refs: Vec<&Tensor> = exps.iter().collect();
        let denom = tape.log(&tape.sum(&tape.concat(&exp_refs)?)?)?;

        let pos_sims: Vec<&Tensor> = pos.iter().map(|&p| sims[i][p].as_ref().unwrap()).collect();
        let mean_pos = tape.mean(&tape.concat(&pos_sims)?)?;
        anchor_losses.push(tape.sub(&denom, &mean_pos)?);
    }
    let refs: Vec<&Tensor> = anchor_losses.iter().collect();
    tape.mean(&tape.concat(&refs)?)
}

fn abs_on_tape(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let neg = tape.scale(x, -1.0)?;
    tape.add(&tape.relu(x)?, &tape.relu(&neg)?)
}

/// Regression loss `w_smape * SMAPE + w_r2 * (1 - R^2)` over normalized
/// predictions and targets.
///
/// SMAPE uses the fraction form in [0, 2]. The R² term reduces to
/// `SS_res / SS_tot` with the target total sum of squares folded in as a
/// constant; it is dropped entirely when the batch targets carry variance
/// below the numerical guard (single-sample batches in particular).
pub fn regression_loss(
    tape: &Tape,
    pred: &Tensor,
    targets: &[f64],
    w: &LossWeights,
) -> Result<Tensor> {
    if targets.is_empty() || pred.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "regression_loss",
            left: pred.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let t_const = Tensor::from_shape(pred.shape().to_vec(), targets.to_vec())?;
    let abs_t = Tensor::from_shape(
        pred.shape().to_vec(),
        targets.iter().map(|v| v.abs()).collect(),
    )?;

    let diff = tape.sub(pred, &t_const)?;
    let abs_diff = abs_on_tape(tape, &diff)?;
    let abs_pred = abs_on_tape(tape, pred)?;
    let half_sum = tape.scale(&tape.add(&abs_pred, &abs_t)?, 0.5)?;
    let denom = tape.clamp_min(&half_sum, EPS_NUM)?;
    let smape = tape.mean(&tape.div(&abs_diff, &denom)?)?;
    let loss = tape.scale(&smape, w.w_smape)?;

    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot / n < EPS_NUM {
        return Ok(loss);
    }
    let ss_res = tape.sum(&tape.mul(&diff, &diff)?)?;
    let r2_term = tape.scale(&ss_res, w.w_r2 / ss_tot)?;
    tape.add(&loss, &r2_term)
}

/// Stage-1 objective for one modality: regression loss plus
/// `lambda * supcon` with the margin evaluated at iteration `t`.
///
/// `labels` are the raw targets used for the margin partition; `targets_norm`
/// are the normalized regression targets the predictions are trained against.
#[allow(clippy::too_many_arguments)]
pub fn stage1_loss(
    tape: &Tape,
    pred: &Tensor,
    z: &[Tensor],
    targets_norm: &[f64],
    labels: &[f64],
    t: u64,
    schedule: &MarginSchedule,
    w: &LossWeights,
) -> Result<Tensor> {
    w.validate()?;
    let reg = regression_loss(tape, pred, targets_norm, w)?;
    if w.lambda_supcon == 0.0 {
        return Ok(reg);
    }
    let m = margin_at(t, schedule);
    let part = partition(labels, m)?;
    let sc = supcon_loss(tape, z, &part, w.tau)?;
    tape.add(&reg, &tape.scale(&sc, w.lambda_supcon)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, ParamPoint, DEFAULT_FD_STEP};
    use proptest::prelude::*;

    #[test]
    fn margin_examples() {
        let s = MarginSchedule::default();
        assert_eq!(margin_at(0, &s), 0.4);
        assert_eq!(margin_at(s.t_n, &s), 0.4);
        let late = margin_at(s.t_n + 1000, &s);
        assert!((late - 0.4 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((late - 0.24261).abs() < 1e-5);
    }

    #[test]
    fn margin_is_non_increasing_and_continuous() {
        let s = MarginSchedule {
            m0: 0.7,
            beta: 0.002,
            t_n: 50,
        };
        let mut prev = f64::INFINITY;
        for t in 0..5000 {
            let m = margin_at(t, &s);
            assert!(m <= prev + 1e-15);
            assert!(m > 0.0 && m <= s.m0);
            prev = m;
        }
        assert!((margin_at(s.t_n, &s) - margin_at(s.t_n - 1, &s)).abs() < 1e-12);
    }

    #[test]
    fn partition_hand_example() {
        let p = partition(&[0.0, 0.3, 0.5, 1.0], 0.4).unwrap();
        assert_eq!(p.positives[0], vec![1]);
        assert_eq!(p.negatives[0], vec![2, 3]);
    }

    #[test]
    fn partition_boundary_goes_negative() {
        let p = partition(&[0.0, 0.4], 0.4).unwrap();
        assert!(p.positives[0].is_empty());
        assert_eq!(p.negatives[0], vec![1]);
    }

    #[test]
    fn partition_of_identical_labels() {
        let p = partition(&[1.0; 4], 0.1).unwrap();
        for i in 0..4 {
            assert_eq!(p.positives[i].len(), 3);
            assert!(p.negatives[i].is_empty());
        }
    }

    #[test]
    fn partition_of_tiny_batches_is_empty() {
        let p = partition(&[1.0], 0.1).unwrap();
        assert_eq!(p.positives, vec![Vec::<usize>::new()]);
        assert!(partition(&[], 0.1).unwrap().is_empty());
        assert!(partition(&[1.0, 2.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn partition_trichotomy(
            labels in prop::collection::vec(-5.0f64..5.0, 2..10),
            m in 0.01f64..3.0,
        ) {
            let p = partition(&labels, m).unwrap();
            for i in 0..labels.len() {
                let mut all: Vec<usize> =
                    p.positives[i].iter().chain(&p.negatives[i]).copied().collect();
                all.sort_unstable();
                let expect: Vec<usize> = (0..labels.len()).filter(|&j| j != i).collect();
                prop_assert_eq!(all, expect);
            }
        }

        #[test]
        fn shrinking_margin_shrinks_positives(
            labels in prop::collection::vec(-5.0f64..5.0, 2..10),
            m in 0.01f64..3.0,
            shrink in 0.1f64..1.0,
        ) {
            let big = partition(&labels, m).unwrap();
            let small = partition(&labels, m * shrink).unwrap();
            for i in 0..labels.len() {
                prop_assert!(small.positives[i].iter().all(|j| big.positives[i].contains(j)));
            }
        }
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn supcon_two_identical_embeddings_is_zero() {
        let tape = Tape::new();
        let z = vec![
            tape.leaf(Tensor::vector(unit(vec![1.0, 1.0]))).unwrap(),
            tape.leaf(Tensor::vector(unit(vec![1.0, 1.0]))).unwrap(),
        ];
        let part = partition(&[0.0, 0.0], 0.5).unwrap();
        let loss = supcon_loss(&tape, &z, &part, 0.07).unwrap();
        assert!(loss.item().unwrap().abs() < 1e-9);
    }

    #[test]
    fn supcon_three_point_hand_value() {
        // z1 = z2 positive pair, z3 orthogonal negative, tau = 1:
        // per-anchor loss = -log(e / (e + 1)).
        let tape = Tape::new();
        let z = vec![
            tape.leaf(Tensor::vector(vec![1.0, 0.0])).unwrap(),
            tape.leaf(Tensor::vector(vec![1.0, 0.0])).unwrap(),
            tape.leaf(Tensor::vector(vec![0.0, 1.0])).unwrap(),
        ];
        let part = partition(&[0.0, 0.0, 10.0], 0.5).unwrap();
        let loss = supcon_loss(&tape, &z, &part, 1.0).unwrap().item().unwrap();
        let expected = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        // The guarded log shifts the value by ~3e-9.
        assert!((loss - expected).abs() < 1e-8);
        assert!((loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn supcon_without_positives_is_zero() {
        let tape = Tape::new();
        let z = vec![
            tape.leaf(Tensor::vector(vec![1.0, 0.0])).unwrap(),
            tape.leaf(Tensor::vector(vec![0.0, 1.0])).unwrap(),
        ];
        let part = partition(&[0.0, 100.0], 0.5).unwrap();
        assert_eq!(
            supcon_loss(&tape, &z, &part, 0.07).unwrap().item().unwrap(),
            0.0
        );
    }

    #[test]
    fn supcon_rejects_unnormalized_embeddings() {
        let tape = Tape::new();
        let z = vec![
            tape.leaf(Tensor::vector(vec![2.0, 0.0])).unwrap(),
            tape.leaf(Tensor::vector(vec![0.0, 1.0])).unwrap(),
        ];
        let part = partition(&[0.0, 0.0], 0.5).unwrap();
        assert!(supcon_loss(&tape, &z, &part, 0.07).is_err());
    }

    proptest! {
        #[test]
        fn supcon_is_non_negative(
            seeds in prop::collection::vec(0.01f64..1.0, 4),
            labels in prop::collection::vec(-2.0f64..2.0, 4),
            m in 0.05f64..2.0,
        ) {
            let tape = Tape::new();
            let z: Vec<Tensor> = seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let raw = vec![s, (i as f64 + 1.0) * 0.3 - s, 0.2 + s * s];
                    tape.leaf(Tensor::vector(unit(raw))).unwrap()
                })
                .collect();
            let part = partition(&labels, m).unwrap();
            let loss = supcon_loss(&tape, &z, &part, 0.3).unwrap().item().unwrap();
            prop_assert!(loss >= -1e-9, "supcon loss {loss}");
        }
    }

    #[test]
    fn regression_loss_perfect_prediction_is_zero() {
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::vector(vec![0.2, 0.5, 0.9])).unwrap();
        let w = LossWeights::default();
        let loss = regression_loss(&tape, &pred, &[0.2, 0.5, 0.9], &w).unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
    }

    #[test]
    fn regression_loss_mean_predictor_pays_full_r2() {
        let targets = [0.1, 0.5, 0.9];
        let mean = targets.iter().sum::<f64>() / 3.0;
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::vector(vec![mean; 3])).unwrap();
        let w = LossWeights {
            w_smape: 0.0,
            ..LossWeights::default()
        };
        let loss = regression_loss(&tape, &pred, &targets, &w)
            .unwrap()
            .item()
            .unwrap();
        assert!((loss - w.w_r2).abs() < 1e-12);
    }

    #[test]
    fn regression_loss_single_sample_drops_r2() {
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::vector(vec![0.2])).unwrap();
        let w = LossWeights::default();
        let loss = regression_loss(&tape, &pred, &[0.4], &w)
            .unwrap()
            .item()
            .unwrap();
        assert!((loss - 0.2 / 0.3).abs() < 1e-9);
    }

    #[test]
    fn stage1_reduces_to_regression_when_lambda_is_zero() {
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::vector(vec![0.3, 0.6])).unwrap();
        let z = vec![
            tape.leaf(Tensor::vector(vec![1.0, 0.0])).unwrap(),
            tape.leaf(Tensor::vector(vec![0.0, 1.0])).unwrap(),
        ];
        let w = LossWeights {
            lambda_supcon: 0.0,
            ..LossWeights::default()
        };
        let s = MarginSchedule::default();
        let full = stage1_loss(&tape, &pred, &z, &[0.4, 0.5], &[-1.0, 2.0], 0, &s, &w)
            .unwrap()
            .item()
            .unwrap();
        let reg = regression_loss(&tape, &pred, &[0.4, 0.5], &w)
            .unwrap()
            .item()
            .unwrap();
        assert_eq!(full.to_bits(), reg.to_bits());
    }

    #[test]
    fn stage1_golden_value() {
        let tape = Tape::new();
        let z = vec![
            tape.leaf(Tensor::vector(unit(vec![1.0, 2.0]))).unwrap(),
            tape.leaf(Tensor::vector(unit(vec![1.0, 1.9]))).unwrap(),
            tape.leaf(Tensor::vector(unit(vec![-2.0, 1.0]))).unwrap(),
        ];
        let pred = tape.leaf(Tensor::vector(vec![0.25, 0.75, 0.5])).unwrap();
        let w = LossWeights::default();
        let s = MarginSchedule::default();
        let loss = stage1_loss(
            &tape,
            &pred,
            &z,
            &[0.3, 0.7, 0.4],
            &[-0.2, 0.1, -3.0],
            10,
            &s,
            &w,
        )
        .unwrap()
        .item()
        .unwrap();
        // Frozen from the first run.
        assert!((loss - 0.3307456181195291).abs() < 1e-12, "stage1 {loss}");
    }

    #[test]
    fn stage1_gradients_match_finite_differences() {
        // Raw embeddings are normalized on the tape so the chain through the
        // normalization is exercised too.
        let schedule = MarginSchedule::default();
        let w = LossWeights {
            tau: 0.3,
            ..LossWeights::default()
        };
        let labels = [-0.1, 0.2];
        let targets = [0.35, 0.6];
        let f = move |tape: &Tape, ps: &[Tensor]| {
            let pred = tape.sigmoid(&ps[0])?;
            let z: Vec<Tensor> = ps[1..]
                .iter()
                .map(|raw| {
                    let n = tape.clamp_min(&tape.l2_norm(raw)?, EPS_NUM)?;
                    tape.div(raw, &n)
                })
                .collect::<Result<Vec<_>>>()?;
            stage1_loss(tape, &pred, &z, &targets, &labels, 3, &schedule, &w)
        };
        let point = [
            ParamPoint::new("logits", vec![2], vec![0.2, -0.4]),
            ParamPoint::new("z0", vec![3], vec![0.5, -1.0, 0.3]),
            ParamPoint::new("z1", vec![3], vec![0.4, -0.9, 0.6]),
        ];
        let report = grad_check(f, &point, DEFAULT_FD_STEP).unwrap();
        assert!(
            report.passes(1e-5, 1e-7),
            "max rel {} max abs {}",
            report.max_rel_err,
            report.max_abs_err
        );
        assert!(report.max_rel_err < 1e-5);
    }
}
