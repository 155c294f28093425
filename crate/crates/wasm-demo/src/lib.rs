//! Browser bindings for three interactive explorations: the double-well
//! optimizer probe (sharpness-modulated vs fixed factor), the divergence
//! regime of amplified gradient descent, and the adaptive contrastive margin
//! over a long-tailed label sample.
//!
//! Every entry point takes plain numbers and returns a JSON string so the
//! page needs no generated glue beyond the standard wasm-bindgen loader, and
//! the same functions are unit-testable on the host.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tailfuse::datagen::{sample_targets, LongTailSpec};
use tailfuse::losses::{margin_at, partition, MarginSchedule};
use tailfuse::sgm::SgmConfig;
use tailfuse::theory::{
    divergence_verdict, double_well_probe, gd_trajectory, pearson, ProbeConfig, ProbeOptimizer,
    ProbeTrace, QuadraticTestbed, WellSpec,
};

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
}

fn error_json(msg: impl std::fmt::Display) -> String {
    to_json(&serde_json::json!({ "error": msg.to_string() }))
}

#[derive(Serialize)]
struct DoubleWellOut {
    landscape_u: Vec<f64>,
    landscape_f: Vec<f64>,
    sgm: ProbeTrace,
    fixed: ProbeTrace,
    pearson_sgm: Option<f64>,
    gamma_min: f64,
}

/// Runs the modulated and fixed-factor optimizers on a two-well landscape.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn demo_double_well(
    narrow_depth: f64,
    narrow_width: f64,
    wide_center: f64,
    wide_depth: f64,
    wide_width: f64,
    gamma_base: f64,
    eta: f64,
    start: f64,
    steps: u32,
    seed: u32,
) -> String {
    let wells = WellSpec {
        centers: vec![0.0, wide_center],
        depths: vec![narrow_depth, wide_depth],
        widths: vec![narrow_width, wide_width],
    };
    let cfg = ProbeConfig {
        noise_scale: 1e-3,
        sgm: SgmConfig {
            eta,
            gamma_base,
            gamma_min: (0.5f64).min(gamma_base),
            gamma_max: 15.0f64.max(gamma_base),
            eps_probe: 0.05,
            ..SgmConfig::default()
        },
    };
    let steps = steps.min(20_000) as usize;
    let sgm = match double_well_probe(&wells, ProbeOptimizer::Sgm, start, steps, seed as u64, &cfg)
    {
        Ok(t) => t,
        Err(e) => return error_json(e),
    };
    let fixed = match double_well_probe(
        &wells,
        ProbeOptimizer::FixedGamma(cfg.sgm.gamma_min),
        start,
        steps,
        seed as u64,
        &cfg,
    ) {
        Ok(t) => t,
        Err(e) => return error_json(e),
    };

    let lo = (-4.0 * narrow_width)
        .min(wide_center - 4.0 * wide_width)
        .min(start - 0.5);
    let hi = (4.0 * narrow_width)
        .max(wide_center + 4.0 * wide_width)
        .max(start + 0.5);
    let n = 400;
    let mut landscape_u = Vec::with_capacity(n);
    let mut landscape_f = Vec::with_capacity(n);
    for i in 0..n {
        let u = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        landscape_u.push(u);
        landscape_f.push(wells.value(u));
    }
    let pearson_sgm = pearson(&sgm.sharpness_trace, &sgm.gamma_trace);
    to_json(&DoubleWellOut {
        landscape_u,
        landscape_f,
        sgm,
        fixed,
        pearson_sgm,
        gamma_min: cfg.sgm.gamma_min,
    })
}

#[derive(Serialize)]
struct DivergenceOut {
    trajectory: Vec<f64>,
    factor: f64,
    verdict: String,
    /// Amplification at the stability boundary, `2 / (eta * L)`.
    gamma_critical: f64,
}

/// Amplified gradient descent on the quadratic testbed.
#[wasm_bindgen]
pub fn demo_divergence(eta: f64, gamma: f64, l_smooth: f64, u0: f64, steps: u32) -> String {
    let tb = QuadraticTestbed {
        l_smooth,
        u0,
        eta,
        gamma,
        steps: steps.clamp(3, 10_000) as usize,
    };
    let traj = match gd_trajectory(&tb) {
        Ok(t) => t,
        Err(e) => return error_json(e),
    };
    let verdict = match divergence_verdict(&traj) {
        Ok(v) => format!("{v:?}"),
        Err(e) => return error_json(e),
    };
    to_json(&DivergenceOut {
        trajectory: traj,
        factor: tb.contraction_factor(),
        verdict,
        gamma_critical: 2.0 / (eta * l_smooth),
    })
}

#[derive(Serialize)]
struct MarginOut {
    margin_t: Vec<f64>,
    margin_m: Vec<f64>,
    /// Fraction of ordered batch pairs that count as positives at each t.
    positive_fraction: Vec<f64>,
    histogram_edges: Vec<f64>,
    histogram_counts: Vec<usize>,
    batch_labels: Vec<f64>,
}

/// Margin schedule over time plus its effect on a batch drawn from the
/// long-tailed target sampler.
#[wasm_bindgen]
pub fn demo_margin(
    m0: f64,
    beta: f64,
    t_n: u32,
    t_max: u32,
    tail_exponent: f64,
    batch_size: u32,
    seed: u32,
) -> String {
    if !(m0 > 0.0) || !(beta > 0.0) {
        return error_json("m0 and beta must be positive");
    }
    let schedule = MarginSchedule {
        m0,
        beta,
        t_n: t_n as u64,
    };
    let spec = LongTailSpec {
        n_samples: 2000,
        tail_exponent: tail_exponent.max(0.05),
        seed: seed as u64,
        ..LongTailSpec::default()
    };
    let targets = match sample_targets(&spec) {
        Ok(t) => t,
        Err(e) => return error_json(e),
    };

    // Histogram of the sampled long-tailed targets.
    let (lo, hi) = spec.target_range;
    let bins = 38;
    let mut histogram_counts = vec![0usize; bins];
    for &y in &targets {
        let b = (((y - lo) / (hi - lo)) * bins as f64).floor() as usize;
        histogram_counts[b.min(bins - 1)] += 1;
    }
    let histogram_edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();

    let batch: Vec<f64> = targets
        .iter()
        .take(batch_size.clamp(2, 64) as usize)
        .copied()
        .collect();
    let t_max = t_max.clamp(1, 100_000) as u64;
    let points = 300u64;
    let mut margin_t = Vec::new();
    let mut margin_m = Vec::new();
    let mut positive_fraction = Vec::new();
    let pairs = (batch.len() * (batch.len() - 1)) as f64;
    for i in 0..=points {
        let t = t_max * i / points;
        let m = margin_at(t, &schedule);
        margin_t.push(t as f64);
        margin_m.push(m);
        match partition(&batch, m) {
            Ok(p) => {
                let pos: usize = p.positives.iter().map(|v| v.len()).sum();
                positive_fraction.push(pos as f64 / pairs);
            }
            Err(e) => return error_json(e),
        }
    }
    to_json(&MarginOut {
        margin_t,
        margin_m,
        positive_fraction,
        histogram_edges,
        histogram_counts,
        batch_labels: batch,
    })
}
