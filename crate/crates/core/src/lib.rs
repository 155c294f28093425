//! Two-stage multimodal regression on synthetic long-tailed data.
//!
//! Stage 1 pretrains each unimodal encoder with an adaptive-margin supervised
//! contrastive loss on top of the regression objective. Stage 2 jointly trains
//! the fused model with sharpness-aware gradient modulation: per-objective
//! gradients are Pareto-integrated, rescaled to the baseline gradient norm,
//! and amplified or damped by a sharpness score normalized against a sliding
//! window of recent scores.
//!
//! The crate also ships a numerical theory suite (divergence regime of
//! amplified gradient descent, flat-region containment bounds, double-well
//! optimizer probes), the five regression metrics used for grouped
//! Many/Middle/Few evaluation, and a deterministic long-tailed data generator.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod minnorm;
pub mod model;
pub mod pipeline;
pub mod sgm;
pub mod theory;

pub use autodiff::{cosine_similarity, OpKind, Tape, Tensor, EPS_NUM};
pub use error::{Error, Result};
