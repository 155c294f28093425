//! Regression metrics (R², MSE, MAE, GM, SMAPE) and grouped evaluation over
//! Many/Middle/Few frequency groups.
//!
//! SMAPE is reported as a fraction in [0, 2]. R² is NaN (serialized as null)
//! when the targets carry no variance, so single-valued groups still render.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::EPS_NUM;
use crate::datagen::{Dataset, Group};
use crate::error::{Error, Result};

pub const DEFAULT_GM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: f64,
    pub mse: f64,
    pub mae: f64,
    pub gm: f64,
    pub smape: f64,
    pub n: usize,
}

/// Computes all five metrics over aligned target/prediction slices.
pub fn compute_metrics(y: &[f64], yhat: &[f64], gm_eps: f64) -> Result<MetricsReport> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::ShapeMismatch {
            op: "compute_metrics",
            left: vec![y.len()],
            right: vec![yhat.len()],
        });
    }
    let n = y.len() as f64;
    let mean_y = y.iter().sum::<f64>() / n;

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut abs_sum = 0.0;
    let mut log_sum = 0.0;
    let mut smape_sum = 0.0;
    for (&t, &p) in y.iter().zip(yhat) {
        let e = t - p;
        ss_res += e * e;
        ss_tot += (t - mean_y) * (t - mean_y);
        abs_sum += e.abs();
        log_sum += (e.abs() + gm_eps).ln();
        let denom = t.abs() + p.abs();
        if denom >= EPS_NUM {
            smape_sum += e.abs() / (denom / 2.0);
        }
    }

    let r2 = if ss_tot < EPS_NUM {
        f64::NAN
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(MetricsReport {
        r2,
        mse: ss_res / n,
        mae: abs_sum / n,
        gm: (log_sum / n).exp(),
        smape: smape_sum / n,
        n: y.len(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupedReport {
    pub overall: MetricsReport,
    pub per_group: BTreeMap<Group, MetricsReport>,
}

/// Metrics overall and per frequency group; empty groups are omitted.
pub fn grouped_eval(dataset: &Dataset, predictions: &[f64]) -> Result<GroupedReport> {
    if predictions.len() != dataset.samples.len() {
        return Err(Error::invalid(format!(
            "predictions ({}) are not aligned with the dataset ({})",
            predictions.len(),
            dataset.samples.len()
        )));
    }
    let y: Vec<f64> = dataset.samples.iter().map(|s| s.target).collect();
    let overall = compute_metrics(&y, predictions, DEFAULT_GM_EPS)?;

    let mut per_group = BTreeMap::new();
    for group in [Group::Many, Group::Middle, Group::Few] {
        let idx: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.group == group)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let gy: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let gp: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
        per_group.insert(group, compute_metrics(&gy, &gp, DEFAULT_GM_EPS)?);
    }
    Ok(GroupedReport { overall, per_group })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let r = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], DEFAULT_GM_EPS).unwrap();
        assert_eq!(r.r2, 1.0);
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.mae, 0.0);
        assert!((r.gm - DEFAULT_GM_EPS).abs() < 1e-18);
        assert_eq!(r.smape, 0.0);
        assert_eq!(r.n, 3);
    }

    #[test]
    fn hand_computed_values() {
        let r = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], DEFAULT_GM_EPS).unwrap();
        assert!((r.mse - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.r2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn smape_hits_its_upper_bound() {
        let r = compute_metrics(&[0.0], &[2.0], DEFAULT_GM_EPS).unwrap();
        assert!((r.smape - 2.0).abs() < 1e-12);
    }

    #[test]
    fn smape_is_symmetric() {
        let y = [1.3, -0.4, 7.7, 0.0];
        let p = [0.9, -1.0, 6.6, 0.2];
        let a = compute_metrics(&y, &p, DEFAULT_GM_EPS).unwrap().smape;
        let b = compute_metrics(&p, &y, DEFAULT_GM_EPS).unwrap().smape;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn r2_of_mean_predictor_is_zero() {
        let y = [2.0, 4.0, 9.0, -3.0];
        let mean = y.iter().sum::<f64>() / 4.0;
        let p = [mean; 4];
        let r = compute_metrics(&y, &p, DEFAULT_GM_EPS).unwrap();
        assert!(r.r2.abs() < 1e-12);
    }

    #[test]
    fn r2_sentinel_on_degenerate_targets() {
        let r = compute_metrics(&[5.0, 5.0], &[4.0, 6.0], DEFAULT_GM_EPS).unwrap();
        assert!(r.r2.is_nan());
    }

    #[test]
    fn gm_scales_linearly_with_errors() {
        let y = [0.0, 0.0, 0.0];
        let p = [1.0, 2.0, 4.0];
        let p3 = [3.0, 6.0, 12.0];
        let a = compute_metrics(&y, &p, 0.0).unwrap().gm;
        let b = compute_metrics(&y, &p3, 0.0).unwrap().gm;
        assert!((b / a - 3.0).abs() < 1e-6);
    }

    #[test]
    fn mae_bounded_by_rmse() {
        let y = [1.0, -2.0, 0.5, 9.0, 3.3];
        let p = [0.0, -2.5, 1.5, 7.0, 3.0];
        let r = compute_metrics(&y, &p, DEFAULT_GM_EPS).unwrap();
        assert!(r.mae <= r.mse.sqrt() + 1e-12);
        // For n = 1 the bound is an equality: MSE = MAE^2.
        let one = compute_metrics(&[2.0], &[0.5], DEFAULT_GM_EPS).unwrap();
        assert!((one.mse - one.mae * one.mae).abs() < 1e-12);
    }

    #[test]
    fn empty_or_mismatched_inputs_error() {
        assert!(compute_metrics(&[], &[], DEFAULT_GM_EPS).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0], DEFAULT_GM_EPS).is_err());
    }

    #[test]
    fn constant_mean_predictor_suffers_most_on_the_tail() {
        // The head sits in a narrow value band near the overall mean while
        // tail samples are spread far from it.
        use crate::datagen::{sample_targets, synthesize, GroupThresholds, LongTailSpec};
        let spec = LongTailSpec::default();
        let targets = sample_targets(&spec).unwrap();
        let mut ds = synthesize(&spec, &targets).unwrap();
        ds.relabel_groups(&GroupThresholds::default()).unwrap();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let preds = vec![mean; ds.len()];
        let report = grouped_eval(&ds, &preds).unwrap();
        let many = report.per_group[&Group::Many].mse;
        let few = report.per_group[&Group::Few].mse;
        assert!(few > many, "few {few} vs many {many}");
    }

    #[test]
    fn single_group_matches_overall() {
        use crate::datagen::MultimodalSample;
        let samples = vec![
            MultimodalSample {
                features: vec![vec![0.0], vec![0.0]],
                target: 1.0,
                group: Group::Many,
            },
            MultimodalSample {
                features: vec![vec![0.0], vec![0.0]],
                target: 2.0,
                group: Group::Many,
            },
        ];
        let ds = Dataset {
            samples,
            modality_dims: vec![1, 1],
        };
        let report = grouped_eval(&ds, &[1.5, 1.5]).unwrap();
        assert_eq!(report.per_group.len(), 1);
        let only = report.per_group[&Group::Many];
        assert_eq!(only.mse, report.overall.mse);
        assert_eq!(only.n, report.overall.n);
    }
}
