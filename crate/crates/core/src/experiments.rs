//! Scaling studies: confidence against the number of runs at a fixed
//! particle budget, uncertainty against the budget, Cramér–Rao saturation
//! and the odd-`m` tail cancellation diagnostic.
//!
//! All studies default to a true phase of zero, where the outcome-averaged
//! posterior is exact. A non-zero `theta_true` switches to the Monte Carlo
//! average where the operation allows it.

use std::f64::consts::FRAC_PI_4;

use rayon::prelude::*;
use serde::Serialize;

use crate::bayes_engine::{
    averaged_posterior_exact_zero, averaged_posterior_mc, confidence_halfwidth, phase_estimate,
    posterior_sigma, PhaseGrid, Posterior,
};
use crate::error::{domain, Error, Result};
use crate::interferometer::TwinState;
use crate::rotation_kernels::{MagneticIndex, SpinQuantum};

/// Confidence levels of the multi-level p-sweep: the Gaussian ½σ … 5σ masses.
pub const SWEEP_GAMMAS: [f64; 6] = [0.3829, 0.6827, 0.9545, 0.9973, 0.99994, 0.9999994];

/// Lower edge of the fixed angular window in which the cancellation residual is measured.
pub const RESIDUAL_WINDOW_START: f64 = FRAC_PI_4;

/// Runs at or below this count are not expected to follow the `1/√p` law.
pub const CRAMER_RAO_ONSET: u32 = 4;

/// Which member of the input-state family a sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateFamily {
    TwinFock,
    TwinOne,
    Noon,
    Yurke,
    /// Fixed `m`, stored doubled.
    General { two_m: u32 },
}

impl StateFamily {
    /// The state with `two_j = particles`.
    pub fn state(&self, particles: u32) -> Result<TwinState> {
        match *self {
            StateFamily::TwinFock => TwinState::twin_fock(particles),
            StateFamily::TwinOne => TwinState::twin_one(particles),
            StateFamily::Noon => TwinState::noon(particles),
            StateFamily::Yurke => TwinState::yurke(particles),
            StateFamily::General { two_m } => {
                TwinState::new(SpinQuantum::new(particles), MagneticIndex::new(i64::from(two_m)))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            StateFamily::TwinFock => "twin-fock".into(),
            StateFamily::TwinOne => "twin-one".into(),
            StateFamily::Noon => "noon".into(),
            StateFamily::Yurke => "yurke".into(),
            StateFamily::General { two_m } => format!("m={}", f64::from(*two_m) / 2.0),
        }
    }
}

/// What to do when `N_T / p` is not an admissible particle number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemainderPolicy {
    #[default]
    Reject,
    /// Use the admissible `N` closest to `N_T / p` (ties to the smaller);
    /// scaled results then use the realised budget `p N`.
    Nearest,
}

/// Grid resolution used at each sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPolicy {
    /// [`PhaseGrid::default_for`] times a factor.
    Scaled(usize),
    Fixed(usize),
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy::Scaled(1)
    }
}

impl GridPolicy {
    pub fn grid_for(&self, particles: u32) -> Result<PhaseGrid> {
        match *self {
            GridPolicy::Scaled(factor) => Ok(PhaseGrid::scaled_for(particles, factor)),
            GridPolicy::Fixed(m) => PhaseGrid::new(m),
        }
    }
}

/// Split `n_total` particles into `p` runs of `N` particles each.
pub fn split_budget(family: StateFamily, n_total: u32, p: u32, policy: RemainderPolicy) -> Result<u32> {
    let fail = |reason: String| Error::Divisibility { n_total, p, reason };
    if p == 0 || n_total == 0 {
        return Err(fail("budget and run count must be positive".into()));
    }
    if n_total.is_multiple_of(p) && family.state(n_total / p).is_ok() {
        return Ok(n_total / p);
    }
    match policy {
        RemainderPolicy::Reject => Err(fail(format!(
            "N = N_T/p = {:.3} is not an admissible particle number for {}",
            f64::from(n_total) / f64::from(p),
            family.name()
        ))),
        RemainderPolicy::Nearest => {
            let target = f64::from(n_total) / f64::from(p);
            let centre = target.round() as i64;
            (centre - 3..=centre + 3)
                .filter(|&n| n >= 1 && family.state(n as u32).is_ok())
                .min_by(|a, b| {
                    let da = (*a as f64 - target).abs();
                    let db = (*b as f64 - target).abs();
                    da.total_cmp(&db).then(a.cmp(b))
                })
                .map(|n| n as u32)
                .ok_or_else(|| fail(format!("no admissible N near {target:.3}")))
        }
    }
}

/// Parameters of a scaling study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub family: StateFamily,
    /// Total particle budget `N_T` (p-sweeps).
    pub n_total: u32,
    pub p_values: Vec<u32>,
    /// Budgets `N_T` (budget sweeps).
    pub n_values: Vec<u32>,
    pub gamma_levels: Vec<f64>,
    pub theta_true: f64,
    pub remainder: RemainderPolicy,
    pub grid: GridPolicy,
    /// Monte Carlo settings, used only when `theta_true != 0`.
    pub trials: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(family: StateFamily) -> Self {
        Self {
            family,
            n_total: 2000,
            p_values: (1..=10).collect(),
            n_values: Vec::new(),
            gamma_levels: SWEEP_GAMMAS.to_vec(),
            theta_true: 0.0,
            remainder: RemainderPolicy::Reject,
            grid: GridPolicy::default(),
            trials: 10_000,
            seed: 42,
        }
    }

    fn point_posterior(&self, particles: u32, p: u32) -> Result<Posterior> {
        let state = self.family.state(particles)?;
        let grid = self.grid.grid_for(particles)?;
        if self.theta_true == 0.0 {
            averaged_posterior_exact_zero(&state, p as usize, grid)
        } else {
            averaged_posterior_mc(&state, self.theta_true, p as usize, self.trials, self.seed, grid)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PSweepRow {
    pub gamma: f64,
    pub p: u32,
    pub n_per_run: u32,
    pub c_gamma: f64,
    /// `c_γ` times the realised budget `p N`.
    pub c_gamma_times_nt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PSweep {
    /// Ordered by `gamma_levels`, then `p_values`.
    pub rows: Vec<PSweepRow>,
    /// `(γ, p)` minimising `c_γ N_T` for each level.
    pub argmin: Vec<(f64, u32)>,
}

/// Scaled confidence half-width for every `(γ, p)` at fixed `N_T`.
pub fn confidence_vs_p(spec: &SweepSpec) -> Result<PSweep> {
    if spec.theta_true != 0.0 {
        return domain("the p-sweep uses the exact zero-phase posterior; theta_true must be 0");
    }
    if spec.p_values.is_empty() || spec.gamma_levels.is_empty() {
        return domain("p-sweep needs at least one p and one confidence level");
    }
    let splits = spec
        .p_values
        .iter()
        .map(|&p| split_budget(spec.family, spec.n_total, p, spec.remainder).map(|n| (p, n)))
        .collect::<Result<Vec<_>>>()?;

    let per_p: Vec<Vec<PSweepRow>> = splits
        .par_iter()
        .map(|&(p, n)| {
            let post = spec.point_posterior(n, p)?;
            let phi_hat = phase_estimate(&post);
            let budget = f64::from(p * n);
            spec.gamma_levels
                .iter()
                .map(|&gamma| {
                    let c = confidence_halfwidth(&post, phi_hat, gamma)?;
                    Ok(PSweepRow { gamma, p, n_per_run: n, c_gamma: c, c_gamma_times_nt: c * budget })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(spec.gamma_levels.len() * splits.len());
    let mut argmin = Vec::with_capacity(spec.gamma_levels.len());
    for (g, &gamma) in spec.gamma_levels.iter().enumerate() {
        let level: Vec<PSweepRow> = per_p.iter().map(|r| r[g]).collect();
        let best = level
            .iter()
            .min_by(|a, b| a.c_gamma_times_nt.total_cmp(&b.c_gamma_times_nt))
            .expect("non-empty sweep");
        argmin.push((gamma, best.p));
        rows.extend(level);
    }
    Ok(PSweep { rows, argmin })
}

/// Quantity tracked against the particle budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Half-width at this level about the MAP estimate.
    Confidence(f64),
    /// RMS spread about the true phase.
    Sigma,
}

/// Least-squares fit of `y = prefactor · x^exponent` in log-log space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Fit("power-law fit needs positive coordinates".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|l| l.0).sum::<f64>() / n;
    let my = logs.iter().map(|l| l.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|l| (l.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|l| (l.0 - mx) * (l.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_tot: f64 = logs.iter().map(|l| (l.1 - my).powi(2)).sum();
    let ss_res: f64 = logs.iter().map(|l| (l.1 - intercept - exponent * l.0).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(ScalingFit { exponent, prefactor: intercept.exp(), r_squared, points: points.to_vec() })
}

/// `metric` at each budget in `spec.n_values` for the single `p` in
/// `spec.p_values`, with a power-law fit. Points use the realised budget.
pub fn uncertainty_vs_ntotal(spec: &SweepSpec, metric: Metric) -> Result<ScalingFit> {
    let &[p] = spec.p_values.as_slice() else {
        return domain("a budget sweep takes exactly one p value");
    };
    if spec.n_values.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 budgets, got {}", spec.n_values.len())));
    }
    let splits = spec
        .n_values
        .iter()
        .map(|&nt| split_budget(spec.family, nt, p, spec.remainder))
        .collect::<Result<Vec<_>>>()?;
    let points = splits
        .par_iter()
        .map(|&n| {
            let post = spec.point_posterior(n, p)?;
            let value = match metric {
                Metric::Confidence(gamma) => confidence_halfwidth(&post, phase_estimate(&post), gamma)?,
                Metric::Sigma => posterior_sigma(&post, spec.theta_true),
            };
            Ok((f64::from(p * n), value))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_power_law(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CramerRaoRow {
    pub p: u32,
    pub n_total: u32,
    pub sigma: f64,
    pub sigma_times_nt: f64,
    /// `σ N_T / √p`, about 2 once the `1/√p` law holds.
    pub sigma_times_nt_over_sqrt_p: f64,
    /// `p > 4`.
    pub saturated: bool,
}

/// Spread about zero phase for `p` runs of `n_per_run` particles each.
pub fn cramer_rao_saturation(
    family: StateFamily,
    n_per_run: u32,
    p_values: &[u32],
    grid: GridPolicy,
) -> Result<Vec<CramerRaoRow>> {
    let state = family.state(n_per_run)?;
    let grid = grid.grid_for(n_per_run)?;
    p_values
        .par_iter()
        .map(|&p| {
            if p == 0 {
                return domain("p must be at least 1");
            }
            let post = averaged_posterior_exact_zero(&state, p as usize, grid)?;
            let sigma = posterior_sigma(&post, 0.0);
            let n_total = p * n_per_run;
            let scaled = sigma * f64::from(n_total);
            Ok(CramerRaoRow {
                p,
                n_total,
                sigma,
                sigma_times_nt: scaled,
                sigma_times_nt_over_sqrt_p: scaled / f64::from(p).sqrt(),
                saturated: p > CRAMER_RAO_ONSET,
            })
        })
        .collect()
}

/// Tail diagnostics of the single-run zero-phase posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailReport {
    pub two_j: u32,
    pub two_m: i64,
    /// First local minimum of the density to the right of the MAP node.
    pub tail_start: f64,
    /// Posterior mass beyond `tail_start`.
    pub tail_mass: f64,
    /// `max P(m|j,φ)` over `φ ∈ [π/4, π/2]`, i.e. `½|d_{m,m} + d_{m,-m}|²`
    /// (`d_{0,0}²` for `m = 0`).
    pub cancellation_residual: f64,
}

fn tail_report(state: &TwinState) -> Result<TailReport> {
    let grid = PhaseGrid::default_for(state.particles());
    let post = averaged_posterior_exact_zero(state, 1, grid)?;
    let density = post.density();
    let mut k = ((phase_estimate(&post) / grid.spacing()) as usize).min(density.len() - 1);
    while k + 1 < density.len() && density[k + 1] <= density[k] {
        k += 1;
    }
    let tail_mass = (density[k..].iter().sum::<f64>() * grid.spacing()).clamp(0.0, 1.0);
    // log_density is ln P(m|j,φ) itself for a single run
    let cancellation_residual = post
        .log_density()
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.node(*i) >= RESIDUAL_WINDOW_START)
        .map(|(_, l)| l.exp())
        .fold(0.0, f64::max);
    Ok(TailReport {
        two_j: state.particles(),
        two_m: state.m().two_mu(),
        tail_start: grid.node(k),
        tail_mass,
        cancellation_residual,
    })
}

/// One [`TailReport`] per `m` at fixed `j`.
pub fn tail_cancellation_check(j: SpinQuantum, m_values: &[MagneticIndex]) -> Result<Vec<TailReport>> {
    m_values
        .iter()
        .map(|&m| TwinState::new(j, m))
        .collect::<Result<Vec<_>>>()?
        .par_iter()
        .map(tail_report)
        .collect()
}

/// Log-log slope of the cancellation residual against `j - m` at fixed `m`.
pub fn residual_scaling(m: MagneticIndex, spins: &[SpinQuantum]) -> Result<ScalingFit> {
    let reports = spins
        .par_iter()
        .map(|&j| TwinState::new(j, m).and_then(|s| tail_report(&s)))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| ((r.two_j as f64 - r.two_m as f64) / 2.0, r.cancellation_residual))
        .collect();
    fit_power_law(&points)
}
