//! Wigner rotation-matrix columns `d^j_{μ,ν}(θ) = ⟨j,μ| exp(-iθ J_y) |j,ν⟩`.
//!
//! Angular-momentum labels are stored doubled (`two_j`, `two_mu`) so that
//! half-integer spins are exact. Columns are indexed by `i = μ + j`, i.e.
//! `values[0]` is `μ = -j` and `values[2j]` is `μ = +j`.
//!
//! A column is an eigenvector of the rotated generator
//! `cos θ J_z + sin θ J_x` with eigenvalue `ν`, which gives the three-term
//! recurrence
//!
//! ```text
//! c_i v_{i-1} + c_{i+1} v_{i+1} = (2ν - 2μ_i cos θ) / sin θ · v_i,
//! c_i = sqrt(i (2j - i + 1))
//! ```
//!
//! The recurrence is run from both extremal indices towards the centre of
//! the classically allowed band `μ ≈ ν cos θ` (each direction is the growing
//! direction there), the two halves are matched by least squares on a small
//! window and the column is normalised to unit length.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};

/// Largest `two_j` accepted by [`brute_force_rotation`].
pub const ORACLE_MAX_TWO_J: u32 = 60;

/// Magnitudes below this are flushed to zero after normalisation.
pub const FLUSH_THRESHOLD: f64 = 1e-300;

/// Angles closer than this to 0 or π are treated as exactly 0 or π.
const ANGLE_EPS: f64 = 1e-100;

const RESCALE_AT: f64 = 1e100;
const MATCH_HALF_WINDOW: usize = 2;

/// Total angular momentum `j`, stored as the integer `2j = N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinQuantum {
    two_j: u32,
}

impl SpinQuantum {
    pub fn new(two_j: u32) -> Self {
        Self { two_j }
    }

    /// Builds `j` from its (possibly half-integer) value.
    pub fn from_value(j: f64) -> Result<Self> {
        let twice = 2.0 * j;
        if !twice.is_finite() || twice < 0.0 || twice.fract() != 0.0 || twice > u32::MAX as f64 {
            return domain(format!("j = {j} is not a non-negative half-integer"));
        }
        Ok(Self { two_j: twice as u32 })
    }

    pub fn two_j(self) -> u32 {
        self.two_j
    }

    pub fn value(self) -> f64 {
        f64::from(self.two_j) / 2.0
    }

    /// Number of particles per run.
    pub fn particles(self) -> u32 {
        self.two_j
    }

    /// Dimension `2j + 1` of the representation.
    pub fn dim(self) -> usize {
        self.two_j as usize + 1
    }

    pub fn is_integer(self) -> bool {
        self.two_j.is_multiple_of(2)
    }

    /// Checks that `m` is a valid magnetic label for this `j`.
    pub fn admits(self, m: MagneticIndex) -> bool {
        m.two_mu.unsigned_abs() <= u64::from(self.two_j) && (i64::from(self.two_j) - m.two_mu) % 2 == 0
    }

    /// Column index of `m`; the caller guarantees `admits(m)`.
    pub fn index_of(self, m: MagneticIndex) -> usize {
        ((m.two_mu + i64::from(self.two_j)) / 2) as usize
    }

    pub fn label_at(self, index: usize) -> MagneticIndex {
        MagneticIndex::new(2 * index as i64 - i64::from(self.two_j))
    }

    /// All labels `μ = -j, …, j` in column order.
    pub fn labels(self) -> impl Iterator<Item = MagneticIndex> {
        (0..self.dim()).map(move |i| self.label_at(i))
    }

    fn check(self, m: MagneticIndex, what: &str) -> Result<()> {
        if self.admits(m) {
            Ok(())
        } else {
            domain(format!(
                "{what} = {} is not admissible for j = {}",
                m.value(),
                self.value()
            ))
        }
    }
}

/// Magnetic / relative-count label `μ`, stored as `2μ = N₁ - N₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MagneticIndex {
    two_mu: i64,
}

impl MagneticIndex {
    pub fn new(two_mu: i64) -> Self {
        Self { two_mu }
    }

    pub fn from_value(mu: f64) -> Result<Self> {
        let twice = 2.0 * mu;
        if !twice.is_finite() || twice.fract() != 0.0 || twice.abs() > i64::MAX as f64 / 2.0 {
            return domain(format!("{mu} is not a half-integer"));
        }
        Ok(Self { two_mu: twice as i64 })
    }

    pub fn two_mu(self) -> i64 {
        self.two_mu
    }

    pub fn value(self) -> f64 {
        self.two_mu as f64 / 2.0
    }

    pub fn abs(self) -> Self {
        Self { two_mu: self.two_mu.abs() }
    }
}

impl std::ops::Neg for MagneticIndex {
    type Output = Self;

    fn neg(self) -> Self {
        Self { two_mu: -self.two_mu }
    }
}

/// One column `ν` of the rotation matrix at angle `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DColumn {
    pub j: SpinQuantum,
    pub nu: MagneticIndex,
    pub theta: f64,
    pub values: Vec<f64>,
}

impl DColumn {
    /// `d^j_{μ,ν}(θ)`; panics if `μ` is not admissible.
    pub fn get(&self, mu: MagneticIndex) -> f64 {
        assert!(self.j.admits(mu), "row {} outside column of j = {}", mu.value(), self.j.value());
        self.values[self.j.index_of(mu)]
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// `(-1)^k` for an integer `k`.
#[inline]
pub(crate) fn parity_sign(k: i64) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Recurrence coefficients for a fixed `j`, reusable across angles and columns.
///
/// Building the kernel once per `j` and calling [`DKernel::column_into`] per
/// grid node is the fast path used by the posterior code.
#[derive(Debug, Clone)]
pub struct DKernel {
    j: SpinQuantum,
    /// `couplings[i] = sqrt(i (2j - i + 1))` for `1 ≤ i ≤ 2j`, zero at both ends.
    couplings: Vec<f64>,
    inv_couplings: Vec<f64>,
}

impl DKernel {
    pub fn new(j: SpinQuantum) -> Self {
        let n = j.two_j() as usize;
        let mut couplings = vec![0.0; n + 2];
        let mut inv_couplings = vec![0.0; n + 2];
        for i in 1..=n {
            let c = ((i * (n - i + 1)) as f64).sqrt();
            couplings[i] = c;
            inv_couplings[i] = 1.0 / c;
        }
        Self { j, couplings, inv_couplings }
    }

    pub fn spin(&self) -> SpinQuantum {
        self.j
    }

    /// Validated single-column evaluation.
    pub fn column(&self, nu: MagneticIndex, theta: f64) -> Result<DColumn> {
        self.j.check(nu, "column index nu")?;
        if !theta.is_finite() {
            return domain(format!("theta = {theta} is not finite"));
        }
        let mut values = vec![0.0; self.j.dim()];
        let mut scratch = vec![0.0; self.j.dim()];
        self.column_into(nu, theta, &mut values, &mut scratch);
        Ok(DColumn { j: self.j, nu, theta, values })
    }

    /// Writes column `nu` at angle `theta` into `out` (length `2j + 1`).
    ///
    /// `scratch` must have the same length. Arguments are not validated.
    pub fn column_into(&self, nu: MagneticIndex, theta: f64, out: &mut [f64], scratch: &mut [f64]) {
        let n = self.j.two_j() as usize;
        debug_assert_eq!(out.len(), n + 1);
        debug_assert_eq!(scratch.len(), n + 1);

        // Reduce to [0, π]: d(θ + 2π) = (-1)^{2j} d(θ), d(-θ)_{μν} = (-1)^{μ-ν} d(θ)_{μν}.
        let turns = (theta / TAU).floor();
        let mut t = theta - turns * TAU;
        let wrap_odd = self.j.two_j() % 2 == 1 && (turns as i64).rem_euclid(2) == 1;
        let reflected = t > PI;
        if reflected {
            t = TAU - t;
        }

        if t < ANGLE_EPS {
            out.fill(0.0);
            out[self.j.index_of(nu)] = 1.0;
        } else if PI - t < ANGLE_EPS {
            // d_{μν}(π) = (-1)^{j+μ} δ_{μ,-ν}
            out.fill(0.0);
            let mu = -nu;
            out[self.j.index_of(mu)] = parity_sign((i64::from(self.j.two_j()) + mu.two_mu()) / 2);
        } else {
            self.recur(nu, t, out, scratch);
        }

        if reflected {
            let two_j = i64::from(self.j.two_j());
            for (i, v) in out.iter_mut().enumerate() {
                let two_mu = 2 * i as i64 - two_j;
                *v *= parity_sign(two_j + (two_mu - nu.two_mu()) / 2);
            }
        }
        if wrap_odd {
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    fn recur(&self, nu: MagneticIndex, theta: f64, out: &mut [f64], back: &mut [f64]) {
        let n = self.j.two_j() as usize;
        if n == 0 {
            out[0] = 1.0;
            return;
        }
        let (sin, cos) = theta.sin_cos();
        let two_nu = nu.two_mu() as f64;
        let nf = n as f64;
        let coef = |i: usize| (two_nu - (2.0 * i as f64 - nf) * cos) / sin;
        let c = &self.couplings;
        let inv = &self.inv_couplings;

        // Centre of the allowed band, μ_c = ν cos θ.
        let centre = (((two_nu * cos + nf) / 2.0).round().max(0.0) as usize).min(n);
        let lo = centre.saturating_sub(MATCH_HALF_WINDOW);
        let hi = (centre + MATCH_HALF_WINDOW).min(n);

        // Forward from μ = -j, where d_{-j,ν} > 0 on (0, π).
        out[0] = 1.0;
        if hi >= 1 {
            out[1] = coef(0) * out[0] * inv[1];
        }
        for i in 1..hi {
            let next = (coef(i) * out[i] - c[i] * out[i - 1]) * inv[i + 1];
            out[i + 1] = next;
            if next.abs() > RESCALE_AT {
                out[..=i + 1].iter_mut().for_each(|v| *v /= RESCALE_AT);
            }
        }

        // Backward from μ = +j, seeded with the sign of d_{j,ν} = (-1)^{j-ν}|…|.
        back[n] = parity_sign((n as i64 - nu.two_mu()) / 2);
        if lo < n {
            back[n - 1] = coef(n) * back[n] * inv[n];
        }
        for i in (lo + 1..n).rev() {
            let next = (coef(i) * back[i] - c[i + 1] * back[i + 1]) * inv[i];
            back[i - 1] = next;
            if next.abs() > RESCALE_AT {
                back[i - 1..].iter_mut().for_each(|v| *v /= RESCALE_AT);
            }
        }

        let (mut cross, mut norm_b) = (0.0, 0.0);
        for i in lo..=hi {
            cross += out[i] * back[i];
            norm_b += back[i] * back[i];
        }
        let scale = cross / norm_b;
        for i in centre + 1..=n {
            out[i] = scale * back[i];
        }

        let peak = out.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let norm = out.iter().map(|v| (v / peak).powi(2)).sum::<f64>().sqrt() * peak;
        for v in out.iter_mut() {
            *v /= norm;
            if v.abs() < FLUSH_THRESHOLD {
                *v = 0.0;
            }
        }
    }
}

/// Column `ν` of the spin-`j` rotation matrix at angle `theta`.
pub fn wigner_d_column(j: SpinQuantum, nu: MagneticIndex, theta: f64) -> Result<DColumn> {
    DKernel::new(j).column(nu, theta)
}

/// The `ν = 0` column through normalised associated Legendre functions,
/// `d^j_{μ,0}(θ) = sqrt((j-μ)!/(j+μ)!) P_j^μ(cos θ)` (Condon–Shortley phase).
///
/// Independent of the recurrence in [`DKernel`]; used for cross-checks.
pub fn legendre_column(j: SpinQuantum, theta: f64) -> Result<DColumn> {
    if !j.is_integer() {
        return domain(format!("Legendre column needs integer j, got {}", j.value()));
    }
    if !theta.is_finite() {
        return domain(format!("theta = {theta} is not finite"));
    }
    let l = (j.two_j() / 2) as usize;
    let (s, x) = theta.sin_cos();
    let mut values = vec![0.0; 2 * l + 1];
    // Q_m^m = (-1)^m sqrt((2m)!)/(2^m m!) sin^m θ, built up in m.
    let mut diag = 1.0;
    for m in 0..=l {
        if m > 0 {
            diag *= -((2 * m - 1) as f64 / (2 * m) as f64).sqrt() * s;
        }
        let mut prev = 0.0;
        let mut cur = diag;
        for deg in m + 1..=l {
            let next = ((2 * deg - 1) as f64 * x * cur
                - (((deg - 1) * (deg - 1) - m * m) as f64).sqrt() * prev)
                / ((deg * deg - m * m) as f64).sqrt();
            prev = cur;
            cur = next;
        }
        values[l + m] = cur;
        // d_{-μ,0} = (-1)^μ d_{μ,0}
        values[l - m] = parity_sign(m as i64) * cur;
    }
    Ok(DColumn { j, nu: MagneticIndex::new(0), theta, values })
}

/// The full rotation matrix `exp(-iθ J_y)` from a dense matrix exponential.
///
/// `-iJ_y = (J_- - J_+)/2` is real, so the result is a real orthogonal
/// matrix indexed `[μ + j, ν + j]`. Reference for the sign convention.
pub fn brute_force_rotation(j: SpinQuantum, theta: f64) -> Result<DMatrix<f64>> {
    if j.two_j() > ORACLE_MAX_TWO_J {
        return Err(Error::Size { two_j: j.two_j(), limit: ORACLE_MAX_TWO_J });
    }
    if !theta.is_finite() {
        return domain(format!("theta = {theta} is not finite"));
    }
    let n = j.two_j() as usize;
    let mut generator = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 1..=n {
        // ⟨i|J_+|i-1⟩ = ⟨i-1|J_-|i⟩ = sqrt(i (2j - i + 1))
        let c = ((i * (n - i + 1)) as f64).sqrt();
        generator[(i, i - 1)] = -0.5 * c * theta;
        generator[(i - 1, i)] = 0.5 * c * theta;
    }
    Ok(generator.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spin(two_j: u32) -> SpinQuantum {
        SpinQuantum::new(two_j)
    }

    fn mi(two_mu: i64) -> MagneticIndex {
        MagneticIndex::new(two_mu)
    }

    #[test]
    fn spin_one_nu_zero_centre_is_cos() {
        let col = wigner_d_column(spin(2), mi(0), PI / 3.0).unwrap();
        assert!((col.get(mi(0)) - 0.5).abs() < 1e-14);
        let oracle = brute_force_rotation(spin(2), PI / 3.0).unwrap();
        assert!((oracle[(1, 1)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_at_zero_angle() {
        let col = wigner_d_column(spin(40), mi(2), 0.0).unwrap();
        for (i, v) in col.values.iter().enumerate() {
            let expected = if i == 21 { 1.0 } else { 0.0 };
            assert_eq!(*v, expected);
        }
    }

    #[test]
    fn spin_half_quarter_turn() {
        let col = wigner_d_column(spin(1), mi(1), PI / 2.0).unwrap();
        assert!((col.get(mi(1)) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
        let m = brute_force_rotation(spin(1), 0.9).unwrap();
        let (c, s) = ((0.45f64).cos(), (0.45f64).sin());
        // rows/cols ordered μ = -1/2, +1/2
        assert!((m[(0, 0)] - c).abs() < 1e-14);
        assert!((m[(1, 1)] - c).abs() < 1e-14);
        assert!((m[(1, 0)] + s).abs() < 1e-14);
        assert!((m[(0, 1)] - s).abs() < 1e-14);
    }

    #[test]
    fn oracle_is_orthogonal() {
        let m = brute_force_rotation(spin(6), 0.7).unwrap();
        let eye = &m * m.transpose();
        for r in 0..7 {
            for c in 0..7 {
                let expected = if r == c { 1.0 } else { 0.0 };
                assert!((eye[(r, c)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_rejects_large_spin() {
        assert!(matches!(brute_force_rotation(spin(62), 0.3), Err(Error::Size { .. })));
    }

    #[test]
    fn oracle_nu_zero_column_matches_legendre() {
        let m = brute_force_rotation(spin(10), 1.1).unwrap();
        let leg = legendre_column(spin(10), 1.1).unwrap();
        for i in 0..11 {
            assert!((m[(i, 5)] - leg.values[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn legendre_examples() {
        let c = legendre_column(spin(2), PI / 2.0).unwrap();
        assert!(c.values[1].abs() < 1e-15);
        assert!((c.values[0].powi(2) - 0.5).abs() < 1e-14);
        assert!((c.values[2].powi(2) - 0.5).abs() < 1e-14);

        let c = legendre_column(spin(10), 0.0).unwrap();
        for (i, v) in c.values.iter().enumerate() {
            assert_eq!(*v, if i == 5 { 1.0 } else { 0.0 });
        }

        let c = legendre_column(spin(4), PI / 4.0).unwrap();
        assert!((c.values[2] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn legendre_rejects_half_integer() {
        assert!(legendre_column(spin(3), 0.2).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(wigner_d_column(spin(4), mi(6), 0.1).is_err());
        assert!(wigner_d_column(spin(4), mi(1), 0.1).is_err());
        assert!(wigner_d_column(spin(4), mi(2), f64::NAN).is_err());
        assert!(SpinQuantum::from_value(1.25).is_err());
        assert_eq!(SpinQuantum::from_value(20.5).unwrap().two_j(), 41);
    }

    #[test]
    fn half_turn_is_antidiagonal() {
        let m = brute_force_rotation(spin(5), PI).unwrap();
        let k = DKernel::new(spin(5));
        for nu in 0..6 {
            let col = k.column(spin(5).label_at(nu), PI).unwrap();
            for mu in 0..6 {
                assert!((col.values[mu] - m[(mu, nu)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn angles_outside_zero_pi_fold_consistently() {
        let k = DKernel::new(spin(7));
        for &theta in &[-0.4, 3.9, 2.0 * PI + 0.3, -5.0] {
            let m = brute_force_rotation(spin(7), theta).unwrap();
            for nu in 0..8 {
                let col = k.column(spin(7).label_at(nu), theta).unwrap();
                for mu in 0..8 {
                    assert!((col.values[mu] - m[(mu, nu)]).abs() < 1e-10, "θ={theta} μ={mu} ν={nu}");
                }
            }
        }
    }

    #[test]
    fn large_spin_small_angle_stays_finite() {
        let k = DKernel::new(spin(4000));
        for &theta in &[1e-9, 1e-3, PI - 1e-7] {
            let col = k.column(mi(2), theta).unwrap();
            assert!(col.values.iter().all(|v| v.is_finite()));
            assert!((col.norm_squared() - 1.0).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn matches_oracle_small_spin(two_j in 0u32..=24, nu_frac in 0.0f64..1.0, theta in 0.0f64..PI) {
            let j = spin(two_j);
            let nu = j.label_at(((two_j as f64 + 1.0) * nu_frac) as usize);
            let col = wigner_d_column(j, nu, theta).unwrap();
            let m = brute_force_rotation(j, theta).unwrap();
            let c = j.index_of(nu);
            for i in 0..j.dim() {
                prop_assert!((col.values[i] - m[(i, c)]).abs() < 1e-10);
            }
        }

        #[test]
        fn symmetry_and_normalisation(two_j in 1u32..=600, nu_frac in 0.0f64..1.0, theta in 0.0f64..PI) {
            let j = spin(two_j);
            let nu = j.label_at(((two_j as f64 + 1.0) * nu_frac) as usize);
            let k = DKernel::new(j);
            let col = k.column(nu, theta).unwrap();
            let mirror = k.column(-nu, theta).unwrap();
            prop_assert!((col.norm_squared() - 1.0).abs() < 1e-10);
            for i in 0..j.dim() {
                let mu = j.label_at(i);
                let sign = parity_sign((mu.two_mu() - nu.two_mu()) / 2);
                let rhs = sign * mirror.get(-mu);
                prop_assert!((col.values[i] - rhs).abs() < 1e-10);
            }
        }
    }
}
