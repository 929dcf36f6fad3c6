//! Phase posteriors on a uniform grid over the folded domain `[0, π/2]`.
//!
//! The prior is flat on `[-π/2, π/2]` and only `|θ|` is estimable, so every
//! density here is the folded one: `∫₀^{π/2} density dφ = 1`. Quadrature is
//! the midpoint rule on `φ_k = (k + ½) Δ`, `Δ = (π/2)/M`; the cumulative
//! mass is piecewise linear between cell edges.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::interferometer::{check_phase, likelihood, stream_rng, MeasurementRecord, TwinState};
use crate::rotation_kernels::{DKernel, MagneticIndex};

/// Smallest admissible grid resolution.
pub const MIN_RESOLUTION: usize = 1000;

/// Largest `2j` and `p` accepted by [`averaged_posterior_enumerated`].
pub const ENUMERATION_MAX_TWO_J: u32 = 10;
pub const ENUMERATION_MAX_P: usize = 3;

const NODES_PER_TASK: usize = 256;

/// Uniform midpoint mesh on `[0, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseGrid {
    resolution: usize,
}

impl PhaseGrid {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return domain(format!(
                "grid resolution {resolution} below the minimum {MIN_RESOLUTION}"
            ));
        }
        Ok(Self { resolution })
    }

    /// `M = max(20000, 100 N)`: at least ~100 nodes across a central peak of width ~π/N.
    pub fn default_for(particles: u32) -> Self {
        Self { resolution: 20_000.max(100 * particles as usize) }
    }

    /// Default resolution multiplied by `factor` (grid-convergence checks).
    pub fn scaled_for(particles: u32, factor: usize) -> Self {
        Self { resolution: Self::default_for(particles).resolution * factor.max(1) }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn spacing(&self) -> f64 {
        FRAC_PI_2 / self.resolution as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.resolution).map(move |k| self.node(k))
    }
}

/// Normalised phase density on a [`PhaseGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    grid: PhaseGrid,
    density: Vec<f64>,
    log_density: Vec<f64>,
    log_normalizer: f64,
}

impl Posterior {
    /// Builds a posterior from unnormalised log-density values.
    pub fn from_log_density(grid: PhaseGrid, log_density: Vec<f64>) -> Result<Self> {
        assert_eq!(log_density.len(), grid.resolution());
        let peak = log_density
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::DegeneratePosterior);
        }
        let sum: f64 = log_density.iter().map(|l| (l - peak).exp()).sum();
        let log_normalizer = peak + (sum * grid.spacing()).ln();
        let density = log_density.iter().map(|l| (l - log_normalizer).exp()).collect();
        Ok(Self { grid, density, log_density, log_normalizer })
    }

    /// Builds a posterior from non-negative (unnormalised) density values.
    pub fn from_density(grid: PhaseGrid, density: Vec<f64>) -> Result<Self> {
        assert_eq!(density.len(), grid.resolution());
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return domain("density values must be finite and non-negative");
        }
        let log_density = density.iter().map(|d| d.ln()).collect();
        Self::from_log_density(grid, log_density)
    }

    pub fn grid(&self) -> PhaseGrid {
        self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Unnormalised log density; `density = exp(log_density - log_normalizer)`.
    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.spacing()
    }

    /// Cumulative mass at the `M + 1` cell edges `kΔ`.
    pub fn cdf(&self) -> Vec<f64> {
        let h = self.grid.spacing();
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.density.iter().map(|d| {
                acc += d * h;
                acc
            }))
            .collect()
    }

    /// `∫₀^φ density`, linear inside each cell.
    pub fn mass_below(&self, phi: f64, cdf: &[f64]) -> f64 {
        let h = self.grid.spacing();
        let m = self.grid.resolution();
        if phi <= 0.0 {
            return 0.0;
        }
        if phi >= FRAC_PI_2 {
            return cdf[m];
        }
        let k = ((phi / h) as usize).min(m - 1);
        cdf[k] + self.density[k] * (phi - k as f64 * h)
    }
}

/// Phase estimate with its confidence half-width and spread.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConfidenceReport {
    /// MAP estimate φ̄.
    pub phi_hat: f64,
    pub gamma: f64,
    /// Half-width `c_γ` of the interval about φ̄.
    pub half_width: f64,
    /// RMS spread about φ̄.
    pub sigma: f64,
}

/// `ln P(μ_r | j, φ_k)` for each requested outcome, as rows over the grid.
fn log_likelihood_rows(state: &TwinState, outcomes: &[MagneticIndex], grid: PhaseGrid) -> Vec<Vec<f64>> {
    let kernel = DKernel::new(state.j());
    let dim = state.j().dim();
    let r = outcomes.len();
    let half = if state.m().two_mu() == 0 { 1.0 } else { 0.5 };
    let mut flat = vec![0.0; grid.resolution() * r];
    flat.par_chunks_mut(r * NODES_PER_TASK).enumerate().for_each_init(
        || (vec![0.0; dim], vec![0.0; dim]),
        |(column, scratch), (task, chunk)| {
            for (offset, node_values) in chunk.chunks_mut(r).enumerate() {
                let phi = grid.node(task * NODES_PER_TASK + offset);
                kernel.column_into(state.m(), phi, column, scratch);
                for (v, mu) in node_values.iter_mut().zip(outcomes) {
                    let amp = state.amplitude_from_column(column, *mu);
                    *v = (half * amp * amp).ln();
                }
            }
        },
    );
    (0..r)
        .map(|row| flat.iter().skip(row).step_by(r).copied().collect())
        .collect()
}

fn sum_rows(rows: &[Vec<f64>], counts: &[usize], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (row, &count) in rows.iter().zip(counts) {
        if count == 0 {
            continue;
        }
        let c = count as f64;
        for (o, l) in out.iter_mut().zip(row) {
            *o += c * l;
        }
    }
    out
}

/// Posterior `∝ ∏ᵢ P(μᵢ | j, φ)` under the flat prior.
pub fn posterior_from_record(record: &MeasurementRecord, grid: PhaseGrid) -> Result<Posterior> {
    let distinct: Vec<MagneticIndex> = record.outcomes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let counts: Vec<usize> = distinct
        .iter()
        .map(|mu| record.outcomes.iter().filter(|o| *o == mu).count())
        .collect();
    let rows = log_likelihood_rows(&record.state, &distinct, grid);
    Posterior::from_log_density(grid, sum_rows(&rows, &counts, grid.resolution()))
}

/// The outcome-averaged posterior at `θ = 0`, `∝ |d_{m,m}(φ) + d_{m,-m}(φ)|^{2p}`.
///
/// At zero phase only `μ = ±m` occur and both give the same single-run
/// posterior, so the average collapses to a single term.
pub fn averaged_posterior_exact_zero(state: &TwinState, p: usize, grid: PhaseGrid) -> Result<Posterior> {
    if p == 0 {
        return domain("number of measurements p must be at least 1");
    }
    let rows = log_likelihood_rows(state, &[state.m()], grid);
    Posterior::from_log_density(grid, sum_rows(&rows, &[p], grid.resolution()))
}

/// Pointwise mixture of normalised posteriors, weights applied in the given order.
fn mix_posteriors(
    grid: PhaseGrid,
    distinct: &[MagneticIndex],
    rows: &[Vec<f64>],
    components: &[(Vec<usize>, f64)],
) -> Result<Posterior> {
    let m = grid.resolution();
    let mut acc = vec![0.0; m];
    for batch in components.chunks(32) {
        let densities: Vec<Result<Vec<f64>>> = batch
            .par_iter()
            .map(|(counts, _)| {
                Posterior::from_log_density(grid, sum_rows(rows, counts, m)).map(|p| p.density)
            })
            .collect();
        for ((_, weight), density) in batch.iter().zip(densities) {
            for (a, d) in acc.iter_mut().zip(density?) {
                *a += weight * d;
            }
        }
    }
    debug_assert!(distinct.len() == rows.len());
    Posterior::from_density(grid, acc)
}

/// Monte Carlo estimate of the outcome-averaged posterior at true phase `theta`.
///
/// Trial `t` draws its `p` outcomes from ChaCha stream `t` of `seed`, so the
/// result does not depend on the number of worker threads.
pub fn averaged_posterior_mc(
    state: &TwinState,
    theta: f64,
    p: usize,
    trials: usize,
    seed: u64,
    grid: PhaseGrid,
) -> Result<Posterior> {
    if p == 0 || trials == 0 {
        return domain("p and trials must both be at least 1");
    }
    let sampler = likelihood(state, theta)?.sampler();
    let records: Vec<Vec<MagneticIndex>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t);
            let mut outcomes: Vec<MagneticIndex> = (0..p).map(|_| sampler.draw(&mut rng)).collect();
            outcomes.sort_unstable();
            outcomes
        })
        .collect();

    let mut tally: BTreeMap<Vec<MagneticIndex>, usize> = BTreeMap::new();
    for r in records {
        *tally.entry(r).or_default() += 1;
    }
    let distinct: Vec<MagneticIndex> =
        tally.keys().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let rows = log_likelihood_rows(state, &distinct, grid);
    let components: Vec<(Vec<usize>, f64)> = tally
        .iter()
        .map(|(outcomes, &n)| {
            let counts = distinct.iter().map(|mu| outcomes.iter().filter(|o| *o == mu).count()).collect();
            (counts, n as f64 / trials as f64)
        })
        .collect();
    mix_posteriors(grid, &distinct, &rows, &components)
}

/// Exhaustive outcome-averaged posterior over all `(2j+1)^p` records.
///
/// Exponential in `p`; limited to `2j ≤ 10`, `p ≤ 3`. Reference for the
/// Monte Carlo path.
pub fn averaged_posterior_enumerated(state: &TwinState, theta: f64, p: usize, grid: PhaseGrid) -> Result<Posterior> {
    check_phase(theta)?;
    if p == 0 || p > ENUMERATION_MAX_P || state.j().two_j() > ENUMERATION_MAX_TWO_J {
        return domain(format!(
            "enumeration limited to 1 ≤ p ≤ {ENUMERATION_MAX_P} and 2j ≤ {ENUMERATION_MAX_TWO_J}"
        ));
    }
    let dist = likelihood(state, theta)?;
    let labels: Vec<MagneticIndex> = state.j().labels().collect();
    let rows = log_likelihood_rows(state, &labels, grid);
    let dim = labels.len();
    let mut components = Vec::new();
    let mut tuple = vec![0usize; p];
    loop {
        let weight: f64 = tuple.iter().map(|&i| dist.probs[i]).product();
        if weight > 0.0 {
            let mut counts = vec![0usize; dim];
            tuple.iter().for_each(|&i| counts[i] += 1);
            components.push((counts, weight));
        }
        // odometer increment
        let mut pos = 0;
        while pos < p {
            tuple[pos] += 1;
            if tuple[pos] < dim {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
        if pos == p {
            break;
        }
    }
    mix_posteriors(grid, &labels, &rows, &components)
}

/// MAP estimate: the densest node (ties to the smaller φ), refined by a
/// parabola through the log density at the node and its neighbours.
///
/// At the first node the left neighbour is its mirror image at `-Δ/2`, so
/// the parabola is symmetric and the estimate is exactly 0.
pub fn phase_estimate(post: &Posterior) -> f64 {
    let log = post.log_density();
    let mut best = 0;
    for (k, v) in log.iter().enumerate() {
        if *v > log[best] {
            best = k;
        }
    }
    let grid = post.grid();
    let h = grid.spacing();
    if best == 0 {
        return 0.0;
    }
    let centre = grid.node(best);
    if best + 1 == grid.resolution() {
        return centre;
    }
    let (left, mid, right) = (log[best - 1], log[best], log[best + 1]);
    if !(left.is_finite() && right.is_finite()) {
        return centre;
    }
    let curvature = left - 2.0 * mid + right;
    if curvature >= 0.0 {
        return centre;
    }
    let shift = (0.5 * (left - right) / curvature).clamp(-1.0, 1.0);
    (centre + shift * h).clamp(0.0, FRAC_PI_2)
}

/// Half-width `c` of the interval about `phi_hat` holding mass `gamma`.
///
/// The folded density is read as the even extension `density(|φ|)/2` on
/// `[-π/2, π/2]`: the enclosed mass is half the folded mass inside
/// `[φ̄-c, φ̄+c] ∩ [0, π/2]` plus half the mirrored mass of the part below
/// zero. For `φ̄ = 0` this is `∫₀^c density = γ`.
pub fn confidence_halfwidth(post: &Posterior, phi_hat: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return domain(format!("confidence level {gamma} outside (0, 1)"));
    }
    if !(0.0..=FRAC_PI_2).contains(&phi_hat) {
        return domain(format!("estimate {phi_hat} outside [0, π/2]"));
    }
    let cdf = post.cdf();
    let enclosed = |c: f64| {
        let direct = post.mass_below(phi_hat + c, &cdf) - post.mass_below(phi_hat - c, &cdf);
        let mirrored = post.mass_below(c - phi_hat, &cdf);
        0.5 * (direct + mirrored)
    };
    let reachable = enclosed(FRAC_PI_2);
    if reachable < gamma {
        return Err(Error::UnreachableLevel { gamma, reachable });
    }
    let (mut lo, mut hi) = (0.0, FRAC_PI_2);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if enclosed(mid) >= gamma {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// RMS spread `sqrt(∫ (φ - center)² density dφ)` over `[0, π/2]`.
pub fn posterior_sigma(post: &Posterior, center: f64) -> f64 {
    let grid = post.grid();
    let second: f64 = post
        .density()
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let x = grid.node(k) - center;
            x * x * d
        })
        .sum();
    (second * grid.spacing()).sqrt()
}

/// MAP estimate, `gamma` half-width and spread about the estimate.
pub fn confidence_report(post: &Posterior, gamma: f64) -> Result<ConfidenceReport> {
    let phi_hat = phase_estimate(post);
    let half_width = confidence_halfwidth(post, phi_hat, gamma)?;
    Ok(ConfidenceReport { phi_hat, gamma, half_width, sigma: posterior_sigma(post, phi_hat) })
}

/// Largest gap between the cumulative distributions of two posteriors on the same grid.
pub fn kolmogorov_smirnov_distance(a: &Posterior, b: &Posterior) -> Result<f64> {
    if a.grid() != b.grid() {
        return domain("posteriors live on different grids");
    }
    Ok(a.cdf()
        .iter()
        .zip(b.cdf())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
