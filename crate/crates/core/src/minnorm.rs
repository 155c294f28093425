//! Closed-form two-objective MinNorm solver and Pareto weight selection.
//!
//! With exactly two objectives the norm of `a*g1 + (1-a)*g2` is a quadratic
//! in `a`, so the minimizer over [0, 1] has a closed form and no iterative
//! Frank-Wolfe loop is needed.

use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_similarity, EPS_NUM};
use crate::error::{Error, Result};

/// Convex weights for the multimodal and aggregated-unimodal gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoWeights {
    pub alpha_mm: f64,
    pub alpha_uni: f64,
}

impl ParetoWeights {
    pub fn uniform() -> Self {
        ParetoWeights {
            alpha_mm: 0.5,
            alpha_uni: 0.5,
        }
    }
}

/// Minimizes `||a*g1 + (1-a)*g2||` over `a` in [0, 1].
///
/// Near-identical gradients tie-break to uniform weights.
pub fn minnorm_two(g1: &[f64], g2: &[f64]) -> Result<ParetoWeights> {
    if g1.len() != g2.len() || g1.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "minnorm_two",
            left: vec![g1.len()],
            right: vec![g2.len()],
        });
    }
    if g1.iter().chain(g2).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("minnorm_two".into()));
    }
    let mut diff_sq = 0.0;
    let mut num = 0.0;
    for i in 0..g1.len() {
        let d = g1[i] - g2[i];
        diff_sq += d * d;
        num += -d * g2[i]; // <g2 - g1, g2>
    }
    if diff_sq.sqrt() < EPS_NUM {
        return Ok(ParetoWeights::uniform());
    }
    let alpha = (num / diff_sq).clamp(0.0, 1.0);
    Ok(ParetoWeights {
        alpha_mm: alpha,
        alpha_uni: 1.0 - alpha,
    })
}

/// MinNorm weights when the objectives conflict (negative cosine), uniform
/// weights otherwise.
pub fn select_weights(g_mm: &[f64], g_uni: &[f64]) -> Result<ParetoWeights> {
    if cosine_similarity(g_mm, g_uni)? < 0.0 {
        minnorm_two(g_mm, g_uni)
    } else {
        Ok(ParetoWeights::uniform())
    }
}

/// `alpha*g1 + (1-alpha)*g2`, the point on the segment the weights select.
pub fn combine(g1: &[f64], g2: &[f64], w: ParetoWeights) -> Vec<f64> {
    g1.iter()
        .zip(g2)
        .map(|(a, b)| w.alpha_mm * a + w.alpha_uni * b)
        .collect()
}
