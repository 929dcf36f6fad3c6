//! Input states, outcome distributions and sampled measurement records.
//!
//! The interferometer maps the input through `exp(-iθ J_y)`; the detected
//! outcome is the relative count `μ = (N₁ - N₂)/2`.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{domain, Result};
use crate::rotation_kernels::{parity_sign, DKernel, MagneticIndex, SpinQuantum};

/// Symmetric superposition `(|j+m⟩|j-m⟩ + |j-m⟩|j+m⟩)/√2`, or `|j⟩|j⟩` when `m = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TwinState {
    j: SpinQuantum,
    m: MagneticIndex,
}

impl TwinState {
    pub fn new(j: SpinQuantum, m: MagneticIndex) -> Result<Self> {
        if m.two_mu() < 0 {
            return domain(format!("state label m = {} must be non-negative", m.value()));
        }
        if !j.admits(m) {
            return domain(format!(
                "m = {} is not admissible for j = {} (need m ≤ j and matching parity)",
                m.value(),
                j.value()
            ));
        }
        Ok(Self { j, m })
    }

    /// Twin-Fock `|j⟩|j⟩`; needs an even particle number.
    pub fn twin_fock(two_j: u32) -> Result<Self> {
        if !two_j.is_multiple_of(2) {
            return domain(format!("twin-Fock needs an even particle number, got N = {two_j}"));
        }
        Self::new(SpinQuantum::new(two_j), MagneticIndex::new(0))
    }

    /// `m = 1`; needs integer `j ≥ 1`.
    pub fn twin_one(two_j: u32) -> Result<Self> {
        if !two_j.is_multiple_of(2) || two_j < 2 {
            return domain(format!("twin m=1 needs an even particle number N ≥ 2, got N = {two_j}"));
        }
        Self::new(SpinQuantum::new(two_j), MagneticIndex::new(2))
    }

    /// NOON state, `m = j`.
    pub fn noon(two_j: u32) -> Result<Self> {
        if two_j == 0 {
            return domain("NOON state needs at least one particle");
        }
        Self::new(SpinQuantum::new(two_j), MagneticIndex::new(i64::from(two_j)))
    }

    /// Yurke state, `m = 1/2`; needs half-integer `j`.
    pub fn yurke(two_j: u32) -> Result<Self> {
        if two_j % 2 != 1 {
            return domain(format!("Yurke state needs an odd particle number, got N = {two_j}"));
        }
        Self::new(SpinQuantum::new(two_j), MagneticIndex::new(1))
    }

    pub fn j(&self) -> SpinQuantum {
        self.j
    }

    pub fn m(&self) -> MagneticIndex {
        self.m
    }

    /// Particles per run, `N = 2j`.
    pub fn particles(&self) -> u32 {
        self.j.two_j()
    }

    /// `P(μ|j,θ)` for every `μ` given column `m` of the rotation matrix.
    ///
    /// Uses `d_{μ,-m} = (-1)^{μ+m} d_{-μ,m}` so a single column suffices.
    pub(crate) fn probabilities_from_column(&self, column: &[f64], out: &mut [f64]) {
        let n = column.len() - 1;
        if self.m.two_mu() == 0 {
            for (o, d) in out.iter_mut().zip(column) {
                *o = d * d;
            }
            return;
        }
        let two_j = n as i64;
        for (i, o) in out.iter_mut().enumerate() {
            let two_mu = 2 * i as i64 - two_j;
            let mirrored = parity_sign((two_mu + self.m.two_mu()) / 2) * column[n - i];
            let amp = column[i] + mirrored;
            *o = 0.5 * amp * amp;
        }
    }

    /// Amplitude `d_{μ,m} + d_{μ,-m}` (or `d_{μ,0}` for `m = 0`) from column `m`.
    pub(crate) fn amplitude_from_column(&self, column: &[f64], mu: MagneticIndex) -> f64 {
        let i = self.j.index_of(mu);
        if self.m.two_mu() == 0 {
            return column[i];
        }
        let n = column.len() - 1;
        column[i] + parity_sign((mu.two_mu() + self.m.two_mu()) / 2) * column[n - i]
    }
}

/// Exact outcome probabilities `P(μ|j,θ)`, indexed by `μ + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    pub j: SpinQuantum,
    pub theta: f64,
    pub probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn prob(&self, mu: MagneticIndex) -> f64 {
        if self.j.admits(mu) {
            self.probs[self.j.index_of(mu)]
        } else {
            0.0
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Inverse-CDF sampler over the full `μ` range.
    pub fn sampler(&self) -> OutcomeSampler {
        let mut acc = 0.0;
        let cumulative = self
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        OutcomeSampler { j: self.j, cumulative }
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeSampler {
    j: SpinQuantum,
    cumulative: Vec<f64>,
}

impl OutcomeSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MagneticIndex {
        let total = *self.cumulative.last().expect("non-empty distribution");
        let u = rng.gen::<f64>() * total;
        // first index whose cumulative mass exceeds u; zero-probability cells are never hit
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        self.j.label_at(idx)
    }
}

/// `p` outcomes observed for a given state and true phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub state: TwinState,
    pub theta_true: f64,
    pub outcomes: Vec<MagneticIndex>,
}

impl MeasurementRecord {
    pub fn new(state: TwinState, theta_true: f64, outcomes: Vec<MagneticIndex>) -> Result<Self> {
        if outcomes.is_empty() {
            return domain("a measurement record needs at least one outcome");
        }
        if let Some(bad) = outcomes.iter().find(|mu| !state.j().admits(**mu)) {
            return domain(format!(
                "outcome μ = {} is not admissible for j = {}",
                bad.value(),
                state.j().value()
            ));
        }
        Ok(Self { state, theta_true, outcomes })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

pub(crate) fn check_phase(theta: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_2).contains(&theta) {
        return domain(format!("phase θ = {theta} outside [0, π/2]"));
    }
    Ok(())
}

/// Outcome distribution `P(μ|j,θ)` for `θ ∈ [0, π/2]`.
pub fn likelihood(state: &TwinState, theta: f64) -> Result<OutcomeDistribution> {
    check_phase(theta)?;
    let kernel = DKernel::new(state.j());
    let column = kernel.column(state.m(), theta)?;
    let mut probs = vec![0.0; state.j().dim()];
    state.probabilities_from_column(&column.values, &mut probs);
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(OutcomeDistribution { j: state.j(), theta, probs })
}

/// Seeded generator for one Monte Carlo stream.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `p` independent draws from `likelihood(state, theta)`; deterministic in `seed`.
pub fn sample_outcomes(state: &TwinState, theta: f64, p: usize, seed: u64) -> Result<MeasurementRecord> {
    if p == 0 {
        return domain("number of measurements p must be at least 1");
    }
    let sampler = likelihood(state, theta)?.sampler();
    let mut rng = stream_rng(seed, 0);
    let outcomes = (0..p).map(|_| sampler.draw(&mut rng)).collect();
    MeasurementRecord::new(*state, theta, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation_kernels::{brute_force_rotation, legendre_column};
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn named_constructors_validate() {
        assert!(TwinState::twin_fock(3).is_err());
        assert!(TwinState::twin_one(0).is_err());
        assert!(TwinState::twin_one(5).is_err());
        assert!(TwinState::yurke(40).is_err());
        assert_eq!(TwinState::yurke(41).unwrap().m().two_mu(), 1);
        assert_eq!(TwinState::noon(20).unwrap().m().two_mu(), 20);
        assert!(TwinState::new(SpinQuantum::new(4), MagneticIndex::new(-2)).is_err());
        assert!(TwinState::new(SpinQuantum::new(4), MagneticIndex::new(6)).is_err());
    }

    #[test]
    fn m_one_at_zero_phase_splits_evenly() {
        for two_j in [2u32, 10, 40, 400] {
            let d = likelihood(&TwinState::twin_one(two_j).unwrap(), 0.0).unwrap();
            for mu in d.j.labels() {
                let expected = if mu.two_mu().abs() == 2 { 0.5 } else { 0.0 };
                assert_eq!(d.prob(mu), expected);
            }
        }
    }

    #[test]
    fn twin_fock_spin_one_quarter_turn() {
        let d = likelihood(&TwinState::twin_fock(2).unwrap(), FRAC_PI_2).unwrap();
        let oracle = brute_force_rotation(SpinQuantum::new(2), FRAC_PI_2).unwrap();
        for i in 0..3 {
            assert!((d.probs[i] - oracle[(i, 1)].powi(2)).abs() < 1e-14);
        }
        assert!((d.probs[0] - 0.5).abs() < 1e-14);
        assert!(d.probs[1].abs() < 1e-14);
        assert!((d.probs[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn twin_fock_is_squared_legendre() {
        // j = 2, θ = π/4: P(μ) = (j-μ)!/(j+μ)! [P_2^μ(cos θ)]² with
        // P_2^0 = (3x²-1)/2, P_2^1 = -3x sqrt(1-x²), P_2^2 = 3(1-x²).
        let x = FRAC_PI_4.cos();
        let s2 = 1.0 - x * x;
        let expected = [
            9.0 * s2 * s2 / 24.0,
            9.0 * x * x * s2 / 6.0,
            ((3.0 * x * x - 1.0) / 2.0).powi(2),
            9.0 * x * x * s2 / 6.0,
            9.0 * s2 * s2 / 24.0,
        ];
        let d = likelihood(&TwinState::twin_fock(4).unwrap(), FRAC_PI_4).unwrap();
        for (p, e) in d.probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-14, "{p} vs {e}");
        }
    }

    #[test]
    fn twin_fock_matches_legendre_path() {
        for two_j in (2u32..=100).step_by(14) {
            let state = TwinState::twin_fock(two_j).unwrap();
            for k in 0..20 {
                let theta = FRAC_PI_2 * k as f64 / 19.0;
                let d = likelihood(&state, theta).unwrap();
                let leg = legendre_column(state.j(), theta).unwrap();
                for (p, l) in d.probs.iter().zip(&leg.values) {
                    assert!((p - l * l).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn noon_edges_follow_binomial_form() {
        let two_j = 30u32;
        let state = TwinState::noon(two_j).unwrap();
        for &theta in &[0.0, 0.3, 1.2, FRAC_PI_2] {
            let d = likelihood(&state, theta).unwrap();
            let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
            // d_{j,j} = cos^{2j}(θ/2), d_{j,-j} = sin^{2j}(θ/2)
            let edge = 0.5 * (c.powi(two_j as i32) + s.powi(two_j as i32)).powi(2);
            let top = MagneticIndex::new(i64::from(two_j));
            assert!((d.prob(top) - edge).abs() < 1e-12);
            assert!((d.prob(-top) - edge).abs() < 1e-12);
        }
        let d = likelihood(&state, 0.0).unwrap();
        assert_eq!(d.probs[0] + d.probs[two_j as usize], 1.0);
    }

    #[test]
    fn normalised_and_symmetric() {
        let states = [
            TwinState::twin_fock(200).unwrap(),
            TwinState::twin_one(200).unwrap(),
            TwinState::noon(200).unwrap(),
            TwinState::noon(41).unwrap(),
            TwinState::yurke(41).unwrap(),
            TwinState::new(SpinQuantum::new(60), MagneticIndex::new(6)).unwrap(),
        ];
        for state in &states {
            // μ ↔ -μ symmetry needs (-1)^{2m} = 1
            let symmetric = state.m().two_mu() % 2 == 0;
            for k in 0..=10 {
                let d = likelihood(state, FRAC_PI_2 * k as f64 / 10.0).unwrap();
                assert!((d.total() - 1.0).abs() < 1e-10);
                let n = d.probs.len();
                for i in 0..n {
                    assert!(d.probs[i] >= 0.0);
                    if symmetric {
                        assert!((d.probs[i] - d.probs[n - 1 - i]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn single_particle_superposition_is_asymmetric() {
        // j = m = 1/2: P(±1/2) = (1 ∓ sin θ)/2
        let state = TwinState::yurke(1).unwrap();
        let d = likelihood(&state, 0.6).unwrap();
        assert!((d.probs[1] - 0.5 * (1.0 - 0.6f64.sin())).abs() < 1e-14);
        assert!((d.probs[0] - 0.5 * (1.0 + 0.6f64.sin())).abs() < 1e-14);
    }

    #[test]
    fn phase_outside_domain_rejected() {
        let s = TwinState::twin_fock(4).unwrap();
        assert!(likelihood(&s, -0.1).is_err());
        assert!(likelihood(&s, 1.6).is_err());
    }

    #[test]
    fn samples_at_zero_phase_hit_only_plus_minus_m() {
        let rec = sample_outcomes(&TwinState::twin_one(30).unwrap(), 0.0, 5, 9).unwrap();
        assert!(rec.outcomes.iter().all(|mu| mu.two_mu().abs() == 2));
        let rec = sample_outcomes(&TwinState::noon(20).unwrap(), 0.0, 3, 1).unwrap();
        assert!(rec.outcomes.iter().all(|mu| mu.two_mu().abs() == 20));
        assert!(sample_outcomes(&TwinState::noon(20).unwrap(), 0.0, 0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let s = TwinState::twin_fock(10).unwrap();
        let a = sample_outcomes(&s, 0.7, 50, 42).unwrap();
        let b = sample_outcomes(&s, 0.7, 50, 42).unwrap();
        let c = sample_outcomes(&s, 0.7, 50, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.outcomes, c.outcomes);
    }

    #[test]
    fn empirical_frequencies_within_multinomial_bands() {
        let state = TwinState::twin_fock(4).unwrap();
        let theta = 0.9;
        let draws = 1_000_000usize;
        let rec = sample_outcomes(&state, theta, draws, 2024).unwrap();
        let exact = likelihood(&state, theta).unwrap();
        let mut counts = [0usize; 5];
        for mu in &rec.outcomes {
            counts[state.j().index_of(*mu)] += 1;
        }
        for (count, p) in counts.iter().zip(&exact.probs) {
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!((*count as f64 - draws as f64 * p).abs() <= 4.0 * sd, "{count} vs {p}");
        }
    }
}
