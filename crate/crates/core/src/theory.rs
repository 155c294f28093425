//! Executable numerical checks for the analytic results behind the
//! optimizer design.
//!
//! Three families: (1) the divergence regime of gamma-amplified gradient
//! descent on a quadratic, where `eta * gamma * L >= 2` forfeits the descent
//! guarantee; (2) the flat-region stability bound on the base modulation
//! factor, exercised by an adversarial containment simulation; (3) a 1-D
//! double-well probe comparing sharpness-modulated descent against fixed
//! modulation factors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgm::{compute_gamma, probe_sharpness, DifferentiableLoss, SgmConfig, SharpnessWindow};

/// Amplified gradient descent on `f(u) = (L/2) u^2`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadraticTestbed {
    pub l_smooth: f64,
    pub u0: f64,
    pub eta: f64,
    pub gamma: f64,
    pub steps: usize,
}

impl QuadraticTestbed {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_smooth > 0.0) {
            return Err(Error::invalid("smoothness constant must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("at least one step is required"));
        }
        Ok(())
    }

    /// Per-step multiplier `1 - eta * gamma * L` of the exact recurrence.
    pub fn contraction_factor(&self) -> f64 {
        1.0 - self.eta * self.gamma * self.l_smooth
    }
}

/// Iterates `u <- u - eta * gamma * grad f(u)`; the closed form is
/// `u_t = (1 - eta gamma L)^t u_0` and tests hold the loop to it.
pub fn gd_trajectory(tb: &QuadraticTestbed) -> Result<Vec<f64>> {
    tb.validate()?;
    let mut traj = Vec::with_capacity(tb.steps + 1);
    let mut u = tb.u0;
    traj.push(u);
    for _ in 0..tb.steps {
        u -= tb.eta * tb.gamma * tb.l_smooth * u;
        traj.push(u);
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Converging,
    Oscillating,
    Diverging,
}

/// Classifies a trajectory by its endpoint magnitude relative to the start:
/// shrinkage below 0.1x converges, growth beyond 10x diverges.
pub fn divergence_verdict(traj: &[f64]) -> Result<Verdict> {
    if traj.len() < 3 {
        return Err(Error::invalid("trajectory must have at least 3 points"));
    }
    let start = traj[0].abs();
    let end = traj[traj.len() - 1].abs();
    Ok(if end > 10.0 * start {
        Verdict::Diverging
    } else if end < 0.1 * start {
        Verdict::Converging
    } else {
        Verdict::Oscillating
    })
}

/// Flat neighborhood assumptions: gradient norms within `[g_min, g_max]`
/// on the radius-`r` ball, `g_max <= (1+epsilon_g) g_min`, and the window
/// normalization factor confined to `[1/(1+delta), 1+delta]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlatRegionSpec {
    pub r: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub epsilon_g: f64,
    pub delta: f64,
    pub eta: f64,
}

impl FlatRegionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.eta > 0.0 && self.g_min > 0.0) {
            return Err(Error::invalid("r, eta and g_min must be positive"));
        }
        if self.epsilon_g < 0.0 || self.delta < 0.0 {
            return Err(Error::invalid("epsilon_g and delta must be non-negative"));
        }
        if self.g_max > (1.0 + self.epsilon_g) * self.g_min * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "g_max must not exceed (1 + epsilon_g) * g_min",
            ));
        }
        if self.g_max < self.g_min {
            return Err(Error::invalid("g_max must be at least g_min"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlatBoundReport {
    /// Maximal safe base factor for the modulated method:
    /// `r / (eta * g_max * (1 + delta))`.
    pub gamma_base_max: f64,
    /// Maximal safe factor for a fixed-step method: `r / (eta * g_min)`.
    pub gamma_fixed_max: f64,
    /// Lower bound `gamma_fixed_max / ((1+delta)(1+epsilon_g))` that
    /// `gamma_base_max` must dominate.
    pub ratio_lower_bound: f64,
    pub ratio_ok: bool,
}

/// Evaluates the flat-region stability bound and its ratio identity.
pub fn flat_bound(spec: &FlatRegionSpec) -> Result<FlatBoundReport> {
    spec.validate()?;
    let gamma_base_max = spec.r / (spec.eta * spec.g_max * (1.0 + spec.delta));
    let gamma_fixed_max = spec.r / (spec.eta * spec.g_min);
    let ratio_lower_bound = gamma_fixed_max / ((1.0 + spec.delta) * (1.0 + spec.epsilon_g));
    Ok(FlatBoundReport {
        gamma_base_max,
        gamma_fixed_max,
        ratio_lower_bound,
        ratio_ok: gamma_base_max >= ratio_lower_bound * (1.0 - 1e-12),
    })
}

/// 1-D objective with a known minimum, for containment simulations.
pub trait TestFunction {
    fn value(&self, u: f64) -> f64;
    fn grad(&self, u: f64) -> f64;
    fn minimum(&self) -> f64;
}

/// `slope * sqrt((u-c)^2 + a^2)`: near-constant gradient magnitude away
/// from a smoothed tip of radius `a`.
#[derive(Clone, Copy, Debug)]
pub struct SmoothedVee {
    pub center: f64,
    pub slope: f64,
    pub tip_radius: f64,
}

impl SmoothedVee {
    /// Slope chosen so the gradient magnitude peaks at exactly `g_max` on
    /// the radius-`r` boundary.
    pub fn for_flat_region(spec: &FlatRegionSpec, center: f64) -> Self {
        let a = spec.r * 1e-4;
        let slope = spec.g_max * (spec.r * spec.r + a * a).sqrt() / spec.r;
        SmoothedVee {
            center,
            slope,
            tip_radius: a,
        }
    }
}

impl TestFunction for SmoothedVee {
    fn value(&self, u: f64) -> f64 {
        let d = u - self.center;
        self.slope * (d * d + self.tip_radius * self.tip_radius).sqrt()
    }

    fn grad(&self, u: f64) -> f64 {
        let d = u - self.center;
        self.slope * d / (d * d + self.tip_radius * self.tip_radius).sqrt()
    }

    fn minimum(&self) -> f64 {
        self.center
    }
}

/// A smoothed vee with a quartic wall outside `wall_radius`: identical in
/// the flat ball, much steeper beyond it.
#[derive(Clone, Copy, Debug)]
pub struct SteepWalledVee {
    pub vee: SmoothedVee,
    pub wall_radius: f64,
    pub wall_coeff: f64,
}

impl TestFunction for SteepWalledVee {
    fn value(&self, u: f64) -> f64 {
        let d = (u - self.vee.center).abs();
        let wall = if d > self.wall_radius {
            self.wall_coeff * (d - self.wall_radius).powi(4)
        } else {
            0.0
        };
        self.vee.value(u) + wall
    }

    fn grad(&self, u: f64) -> f64 {
        let d = u - self.vee.center;
        let wall = if d.abs() > self.wall_radius {
            4.0 * self.wall_coeff * (d.abs() - self.wall_radius).powi(3) * d.signum()
        } else {
            0.0
        };
        self.vee.grad(u) + wall
    }

    fn minimum(&self) -> f64 {
        self.vee.center
    }
}

const BOUND_CHECK_SLACK: f64 = 1e-3;
const BOUND_CHECK_SAMPLES: usize = 1000;

/// Validates by dense sampling that the function's gradient norms lie in
/// the spec bounds on the annulus `[r/100, r]` around the minimum (the tip
/// itself necessarily has a vanishing gradient).
fn validate_bounds(spec: &FlatRegionSpec, f: &dyn TestFunction) -> Result<()> {
    let u_star = f.minimum();
    let inner = spec.r / 100.0;
    for i in 0..BOUND_CHECK_SAMPLES {
        let d = inner + (spec.r - inner) * i as f64 / (BOUND_CHECK_SAMPLES - 1) as f64;
        for u in [u_star - d, u_star + d] {
            let g = f.grad(u).abs();
            if g < spec.g_min * (1.0 - BOUND_CHECK_SLACK)
                || g > spec.g_max * (1.0 + BOUND_CHECK_SLACK)
            {
                return Err(Error::invalid(format!(
                    "test function gradient {g} at distance {d} violates [{}, {}]",
                    spec.g_min, spec.g_max
                )));
            }
        }
    }
    Ok(())
}

/// Runs modulated updates `u <- u - eta * gamma_base * kappa_t * grad f(u)`
/// from the ball boundary with `kappa_t` drawn adversarially from
/// `[1/(1+delta), 1+delta]` (both endpoints plus uniform draws). Returns
/// whether the iterate stayed within the radius-`r` ball throughout.
pub fn containment_sim(
    spec: &FlatRegionSpec,
    f: &dyn TestFunction,
    gamma_base: f64,
    steps: usize,
    seed: u64,
) -> Result<bool> {
    spec.validate()?;
    if gamma_base < 0.0 {
        return Err(Error::invalid("gamma_base must be non-negative"));
    }
    validate_bounds(spec, f)?;

    let kappa_hi = 1.0 + spec.delta;
    let kappa_lo = 1.0 / (1.0 + spec.delta);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let u_star = f.minimum();
    let mut u = u_star + spec.r;
    for _ in 0..steps {
        let kappa = match rng.gen_range(0u8..4) {
            0 => kappa_hi,
            1 => kappa_lo,
            _ => rng.gen_range(kappa_lo..=kappa_hi),
        };
        u -= spec.eta * gamma_base * kappa * f.grad(u);
        if !u.is_finite() || (u - u_star).abs() > spec.r * (1.0 + 1e-9) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Sum of negative Gaussian wells `-sum_j d_j exp(-(u-c_j)^2 / (2 w_j^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub centers: Vec<f64>,
    pub depths: Vec<f64>,
    pub widths: Vec<f64>,
}

impl WellSpec {
    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty()
            || self.centers.len() != self.depths.len()
            || self.centers.len() != self.widths.len()
        {
            return Err(Error::invalid(
                "well arrays must be non-empty and equal length",
            ));
        }
        if self.widths.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("well widths must be positive"));
        }
        Ok(())
    }

    pub fn value(&self, u: f64) -> f64 {
        let mut v = 0.0;
        for j in 0..self.centers.len() {
            let d = u - self.centers[j];
            v -= self.depths[j] * (-d * d / (2.0 * self.widths[j] * self.widths[j])).exp();
        }
        v
    }

    pub fn grad(&self, u: f64) -> f64 {
        let mut g = 0.0;
        for j in 0..self.centers.len() {
            let d = u - self.centers[j];
            let w2 = self.widths[j] * self.widths[j];
            g += self.depths[j] * d / w2 * (-d * d / (2.0 * w2)).exp();
        }
        g
    }

    /// A narrow, deep well next to a wide, shallow one: the standard fixture
    /// for comparing sharpness-modulated and fixed-factor descent.
    pub fn narrow_wide_pair() -> Self {
        WellSpec {
            centers: vec![0.0, 3.0],
            depths: vec![2.0, 1.0],
            widths: vec![0.1, 1.5],
        }
    }

    pub fn single_wide() -> Self {
        WellSpec {
            centers: vec![1.0],
            depths: vec![1.0],
            widths: vec![1.2],
        }
    }
}

struct WellLoss<'a> {
    wells: &'a WellSpec,
}

impl DifferentiableLoss for WellLoss<'_> {
    fn loss(&mut self, params: &[Vec<f64>]) -> Result<f64> {
        Ok(self.wells.value(params[0][0]))
    }

    fn loss_and_grad(&mut self, params: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let u = params[0][0];
        Ok((self.wells.value(u), vec![vec![self.wells.grad(u)]]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProbeOptimizer {
    Sgm,
    FixedGamma(f64),
}

/// Knobs for the 1-D probe runs. The default base factor sits well above 1
/// so modulation visibly amplifies steps inside sharp wells.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub noise_scale: f64,
    pub sgm: SgmConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            noise_scale: 1e-3,
            sgm: SgmConfig {
                eta: 0.01,
                gamma_base: 5.0,
                gamma_min: 0.5,
                gamma_max: 15.0,
                eps_probe: 0.05,
                ..SgmConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub u_trace: Vec<f64>,
    pub sharpness_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
    pub final_u: f64,
    pub final_sharpness: f64,
}

/// Runs the chosen 1-D optimizer on the well landscape, recording the
/// iterate, sharpness score, and modulation factor at every step.
pub fn double_well_probe(
    wells: &WellSpec,
    optimizer: ProbeOptimizer,
    start: f64,
    steps: usize,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeTrace> {
    wells.validate()?;
    if !start.is_finite() {
        return Err(Error::invalid("start must be finite"));
    }
    cfg.sgm.validate()?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut window = SharpnessWindow::new(cfg.sgm.window_len);
    let mut f = WellLoss { wells };
    let mut u = start;
    let mut u_trace = Vec::with_capacity(steps + 1);
    let mut sharpness_trace = Vec::with_capacity(steps);
    let mut gamma_trace = Vec::with_capacity(steps);
    u_trace.push(u);

    for _ in 0..steps {
        let s = probe_sharpness(&mut f, &[vec![u]], &cfg.sgm)?;
        let gamma = match optimizer {
            ProbeOptimizer::Sgm => compute_gamma(&mut window, s, &cfg.sgm)?,
            ProbeOptimizer::FixedGamma(g) => g,
        };
        let noise: f64 = StandardNormal.sample(&mut rng);
        u -= cfg.sgm.eta * gamma * (wells.grad(u) + cfg.noise_scale * noise);
        if !u.is_finite() {
            return Err(Error::NonFinite("double-well iterate".into()));
        }
        sharpness_trace.push(s);
        gamma_trace.push(gamma);
        u_trace.push(u);
    }

    let final_sharpness = probe_sharpness(&mut f, &[vec![u]], &cfg.sgm)?;
    Ok(ProbeTrace {
        u_trace,
        sharpness_trace,
        gamma_trace,
        final_u: u,
        final_sharpness,
    })
}

/// Pearson correlation; `None` when either side is degenerate.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
