//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the closure's forward evaluation, so it
//! stays independent of the reverse-mode path it validates.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A named parameter point for [`grad_check`].
#[derive(Clone, Debug)]
pub struct ParamPoint {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamPoint {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        ParamPoint {
            name: name.into(),
            shape,
            values,
        }
    }
}

/// Analytic/numeric gradient pair for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Comparison summary across all parameters.
///
/// `max_rel_err` is taken over coordinates whose larger-magnitude side is at
/// least 1e-6; smaller coordinates are judged by `max_abs_err` alone.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub per_parameter: Vec<ParamCheck>,
}

const REL_FLOOR: f64 = 1e-6;

impl GradReport {
    /// Every coordinate must pass either the absolute or the relative bound.
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.per_parameter.iter().all(|p| {
            p.analytic.iter().zip(&p.numeric).all(|(&a, &n)| {
                let abs = (a - n).abs();
                let denom = a.abs().max(n.abs());
                abs <= abs_tol || (denom > 0.0 && abs / denom <= rel_tol)
            })
        })
    }
}

fn eval<F>(f: &F, point: &[ParamPoint]) -> Result<(f64, Option<Vec<Vec<f64>>>)>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves = point
        .iter()
        .map(|p| tape.leaf(Tensor::from_shape(p.shape.clone(), p.values.clone())?))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &leaves)?;
    let value = out.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check evaluation".into()));
    }
    // A closure may return a plain constant; then every gradient is zero.
    let grads = if out.node_id().is_some() {
        let g = tape.backward(&out)?;
        Some(
            leaves
                .iter()
                .map(|l| g.wrt(l).map(|t| t.data().to_vec()))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok((value, grads))
}

/// Compares reverse-mode gradients of `f` at `point` against central finite
/// differences with step `h`.
pub fn grad_check<F>(f: F, point: &[ParamPoint], h: f64) -> Result<GradReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (_, analytic) = eval(&f, point)?;
    let analytic =
        analytic.unwrap_or_else(|| point.iter().map(|p| vec![0.0; p.values.len()]).collect());

    let mut per_parameter = Vec::with_capacity(point.len());
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut shifted: Vec<ParamPoint> = point.to_vec();
    for (pi, p) in point.iter().enumerate() {
        let mut numeric = vec![0.0; p.values.len()];
        for j in 0..p.values.len() {
            shifted[pi].values[j] = p.values[j] + h;
            let f_plus = eval_value_only(&f, &shifted)?;
            shifted[pi].values[j] = p.values[j] - h;
            let f_minus = eval_value_only(&f, &shifted)?;
            shifted[pi].values[j] = p.values[j];
            numeric[j] = (f_plus - f_minus) / (2.0 * h);
        }
        for (&a, &n) in analytic[pi].iter().zip(&numeric) {
            let abs = (a - n).abs();
            max_abs = max_abs.max(abs);
            let denom = a.abs().max(n.abs());
            if denom >= REL_FLOOR {
                max_rel = max_rel.max(abs / denom);
            }
        }
        per_parameter.push(ParamCheck {
            name: p.name.clone(),
            analytic: analytic[pi].clone(),
            numeric,
        });
    }
    Ok(GradReport {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        per_parameter,
    })
}

fn eval_value_only<F>(f: &F, point: &[ParamPoint]) -> Result<f64>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves = point
        .iter()
        .map(|p| tape.leaf(Tensor::from_shape(p.shape.clone(), p.values.clone())?))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &leaves)?;
    let value = out.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check evaluation".into()));
    }
    Ok(value)
}
