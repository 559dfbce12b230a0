//! Parametric energy densities `f(x, X)` on the unit-periodic cell, their
//! geometric linearization, and the checks that the admissibility conditions
//! for (non-)linearly elastic stored energies impose on them.
//!
//! The spatial dependence is restricted to piecewise-constant coefficients
//! `a(x) > 0` on axis-aligned boxes of the unit cell; every density is
//! `a(x) · g(X)` for a kind-specific `g`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::mat::{Mat, MAX_DIM};
use crate::{Error, Result};

/// Relative tolerance of the frame-indifference check.
pub const FRAME_TOL: f64 = 1e-10;

/// Singular values within this distance of 1 are treated as exactly 1 when
/// measuring the distance to SO(n), so rotations built in floating point sit
/// exactly on the well.
const UNIT_SNAP: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DensityKind {
    /// `a(x)|X|ᵖ` with a single coefficient.
    ConstantPNorm,
    /// `a(x)|X|ᵖ` with a phase map.
    TwoPhasePNorm,
    /// `a(x) distᵖ(X, SO(n))`.
    SingleWell,
    /// `a(x) minᵢ distᵖ(X, SO(n)(I + δUᵢ))`.
    MultiWell,
    /// `a(x) minᵢ |X_sym − Uᵢ|ᵖ`.
    LinearizedMultiWell,
    /// `a(x) minᵢ |X − wᵢ|ᵖ` for scalar `X` (wells default to ±1).
    ScalarDoubleWell,
    /// Piecewise-linear interpolation of scalar samples, linearly extrapolated.
    CustomSampled,
}

impl DensityKind {
    /// Whether the density acts on symmetrized gradients only.
    pub fn is_linearized(self) -> bool {
        matches!(self, DensityKind::LinearizedMultiWell)
    }

    /// Whether the density is one of the nonlinear elastic (SO(n)-well) kinds.
    pub fn is_nonlinear_elastic(self) -> bool {
        matches!(self, DensityKind::SingleWell | DensityKind::MultiWell)
    }
}

/// An axis-aligned box `[lo₀, hi₀) × … × [lo_{n−1}, hi_{n−1})` of the unit
/// cell carrying the coefficient `a`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PhaseBox {
    /// `[lo₀, hi₀, lo₁, hi₁, …]`.
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bounds: Vec<f64>,
    pub a: f64,
}

impl PhaseBox {
    pub fn new(bounds: Vec<f64>, a: f64) -> Self {
        PhaseBox { bounds, a }
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &xi)| self.bounds[2 * i] <= xi && xi < self.bounds[2 * i + 1])
    }
}

/// Returns `x` reduced componentwise into `[0, 1)`.
pub fn reduce_to_cell(x: &[f64]) -> [f64; MAX_DIM] {
    let mut r = [0.0; MAX_DIM];
    for (ri, &xi) in r.iter_mut().zip(x) {
        let mut v = xi - libm::floor(xi);
        if v >= 1.0 {
            v = 0.0;
        }
        *ri = v;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DensitySpec {
    pub kind: DensityKind,
    #[cfg_attr(feature = "serde", serde(rename = "dim"))]
    pub n: usize,
    pub p: f64,
    /// Upper growth constant; derived from the kind when absent.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub beta: Option<f64>,
    /// Non-degeneracy constant `c`; derived when absent.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub c_low: Option<f64>,
    /// Non-degeneracy offset `C`; derived when absent.
    #[cfg_attr(
        feature = "serde",
        serde(rename = "C_low", default, skip_serializing_if = "Option::is_none")
    )]
    pub cap_c_low: Option<f64>,
    /// Well separation scale δ (0 for the linearized family).
    #[cfg_attr(feature = "serde", serde(default))]
    pub delta: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub wells: Vec<Mat>,
    /// Coefficient outside every phase box.
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub background: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub phases: Vec<PhaseBox>,
    /// `(X, f)` pairs for [`DensityKind::CustomSampled`].
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub samples: Vec<[f64; 2]>,
}

#[cfg(feature = "serde")]
fn one() -> f64 {
    1.0
}

impl DensitySpec {
    fn base(kind: DensityKind, n: usize, p: f64) -> Self {
        DensitySpec {
            kind,
            n,
            p,
            beta: None,
            c_low: None,
            cap_c_low: None,
            delta: 0.0,
            wells: Vec::new(),
            background: 1.0,
            phases: Vec::new(),
            samples: Vec::new(),
        }
    }

    /// `|X|ᵖ`.
    pub fn constant_p_norm(n: usize, p: f64) -> Self {
        Self::base(DensityKind::ConstantPNorm, n, p)
    }

    /// `a(x)|X|ᵖ` with `a = a_lo` on `x₀ ∈ [0, ½)` and `a_hi` elsewhere.
    pub fn two_phase_p_norm(n: usize, p: f64, a_lo: f64, a_hi: f64) -> Self {
        Self::base(DensityKind::TwoPhasePNorm, n, p).with_layers(a_lo, a_hi)
    }

    /// `distᵖ(X, SO(n))`.
    pub fn single_well(n: usize, p: f64) -> Self {
        Self::base(DensityKind::SingleWell, n, p)
    }

    /// `minᵢ distᵖ(X, SO(n)(I + δUᵢ))`.
    pub fn multi_well(n: usize, p: f64, delta: f64, wells: Vec<Mat>) -> Self {
        let mut s = Self::base(DensityKind::MultiWell, n, p);
        s.delta = delta;
        s.wells = wells;
        s
    }

    /// `minᵢ |X_sym − Uᵢ|ᵖ`.
    pub fn linearized_multi_well(n: usize, p: f64, wells: Vec<Mat>) -> Self {
        let mut s = Self::base(DensityKind::LinearizedMultiWell, n, p);
        s.wells = wells;
        s
    }

    /// `min{|X − 1|ᵖ, |X + 1|ᵖ}` on scalars.
    pub fn scalar_double_well(p: f64) -> Self {
        Self::base(DensityKind::ScalarDoubleWell, 1, p)
    }

    /// Piecewise-linear scalar density through `samples`.
    pub fn custom_sampled(p: f64, samples: Vec<[f64; 2]>) -> Self {
        let mut s = Self::base(DensityKind::CustomSampled, 1, p);
        s.samples = samples;
        s
    }

    /// Two layers normal to the first axis: `a_lo` on `[0, ½)`, `a_hi` on `[½, 1)`.
    pub fn with_layers(mut self, a_lo: f64, a_hi: f64) -> Self {
        let mut bounds = vec![0.0, 0.5];
        for _ in 1..self.n {
            bounds.extend_from_slice(&[0.0, 1.0]);
        }
        self.phases = vec![PhaseBox::new(bounds, a_lo)];
        self.background = a_hi;
        self
    }

    pub fn with_phases(mut self, background: f64, phases: Vec<PhaseBox>) -> Self {
        self.background = background;
        self.phases = phases;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    /// Checks the structural invariants of the description.
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.n) {
            return Err(Error::invalid(alloc::format!("dim {} not in 1..=3", self.n)));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::invalid(alloc::format!("growth exponent p = {} must exceed 1", self.p)));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid("beta must be positive"));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta must be nonnegative"));
        }
        if !(self.background > 0.0 && self.background.is_finite()) {
            return Err(Error::invalid("phase coefficients must be positive"));
        }
        for ph in &self.phases {
            if ph.bounds.len() != 2 * self.n {
                return Err(Error::invalid(alloc::format!(
                    "phase box needs {} bounds, got {}",
                    2 * self.n,
                    ph.bounds.len()
                )));
            }
            if !(ph.a > 0.0 && ph.a.is_finite()) {
                return Err(Error::invalid("phase coefficients must be positive"));
            }
            if ph.bounds.chunks(2).any(|b| !(b[0] < b[1]) || b[0] < 0.0 || b[1] > 1.0) {
                return Err(Error::invalid("phase box must satisfy 0 <= lo < hi <= 1"));
            }
        }
        for w in &self.wells {
            if w.dim() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    found: w.dim(),
                });
            }
            if !w.is_finite() {
                return Err(Error::NonFinite("well"));
            }
            if self.kind != DensityKind::ScalarDoubleWell && !w.is_symmetric(1e-12) {
                return Err(Error::invalid("wells must be symmetric"));
            }
        }
        match self.kind {
            DensityKind::MultiWell | DensityKind::LinearizedMultiWell if self.wells.is_empty() => {
                return Err(Error::invalid("multi-well densities need at least one well"));
            }
            DensityKind::ScalarDoubleWell | DensityKind::CustomSampled if self.n != 1 => {
                return Err(Error::invalid("scalar densities require dim = 1"));
            }
            DensityKind::ConstantPNorm if !self.phases.is_empty() => {
                return Err(Error::invalid("constant-p-norm takes no phases (use two-phase-p-norm)"));
            }
            DensityKind::CustomSampled => {
                if self.samples.len() < 2 {
                    return Err(Error::invalid("custom-sampled needs at least two samples"));
                }
                if self.samples.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                    return Err(Error::Unsorted);
                }
                if self.samples.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("samples"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Coefficient `a(x)`; `x` is reduced modulo the unit period first.
    pub fn coefficient(&self, x: &[f64]) -> f64 {
        if self.phases.is_empty() {
            return self.background;
        }
        let r = reduce_to_cell(x);
        let r = &r[..self.n];
        self.phases
            .iter()
            .find(|ph| ph.contains(r))
            .map_or(self.background, |ph| ph.a)
    }

    /// Whether `a(x)` is constant.
    pub fn is_x_independent(&self) -> bool {
        self.phases.iter().all(|ph| ph.a == self.background)
    }

    fn coeff_range(&self) -> (f64, f64) {
        self.phases
            .iter()
            .fold((self.background, self.background), |(lo, hi), ph| (lo.min(ph.a), hi.max(ph.a)))
    }

    /// The well matrices `I + δUᵢ` of the multi-well kind.
    pub fn well_matrices(&self) -> Vec<Mat> {
        let id = Mat::identity(self.n);
        self.wells.iter().map(|u| id + u.scale(self.delta)).collect()
    }

    fn scalar_wells(&self) -> Vec<f64> {
        if self.wells.is_empty() {
            vec![1.0, -1.0]
        } else {
            self.wells.iter().map(|w| w[(0, 0)]).collect()
        }
    }

    /// Growth and non-degeneracy constants, derived from the kind unless set.
    pub fn bounds(&self) -> GrowthBounds {
        let (a_min, a_max) = self.coeff_range();
        let p = self.p;
        let two = libm::pow(2.0, p - 1.0);
        let wells_pow = |mats: &[Mat]| mats.iter().map(|m| libm::pow(m.norm(), p)).fold(0.0, f64::max);
        let (beta, c, cap_c, lower) = match self.kind {
            DensityKind::ConstantPNorm | DensityKind::TwoPhasePNorm => (a_max, a_min, 0.0, Coercivity::Gradient),
            DensityKind::SingleWell => {
                let root_n = libm::pow(self.n as f64, p / 2.0);
                (a_max * two * root_n.max(1.0), a_min, 0.0, Coercivity::DistSo)
            }
            DensityKind::MultiWell => {
                let wm = self.well_matrices();
                let beta = a_max * two * wells_pow(&wm).max(1.0);
                (beta, a_min / two, a_min * wells_pow(&self.wells), Coercivity::DistSo)
            }
            DensityKind::LinearizedMultiWell => {
                let beta = a_max * two * wells_pow(&self.wells).max(1.0);
                (beta, a_min / two, a_min * wells_pow(&self.wells), Coercivity::SymGradient)
            }
            DensityKind::ScalarDoubleWell => {
                let w = self.scalar_wells().iter().map(|w| libm::pow(libm::fabs(*w), p)).fold(0.0, f64::max);
                (a_max * two * w.max(1.0), a_min / two, a_min * w, Coercivity::Gradient)
            }
            DensityKind::CustomSampled => (1.0, 0.0, 0.0, Coercivity::Gradient),
        };
        GrowthBounds {
            beta: self.beta.unwrap_or(beta),
            c_low: self.c_low.unwrap_or(c),
            cap_c_low: self.cap_c_low.unwrap_or(cap_c),
            delta: self.delta,
            lower,
            invariance: if self.kind.is_linearized() {
                Invariance::Skew
            } else {
                Invariance::Rotation
            },
        }
    }

    /// Validated evaluation of `f(x, X)`.
    pub fn eval(&self, x: &[f64], m: &Mat) -> Result<f64> {
        eval(self, x, m)
    }

    /// Validated evaluation of `∂f/∂X`.
    pub fn eval_grad_x(&self, x: &[f64], m: &Mat) -> Result<Mat> {
        eval_grad_x(self, x, m)
    }

    fn sampled(&self, v: f64) -> (f64, f64) {
        let s = &self.samples;
        let i = s.partition_point(|q| q[0] <= v).clamp(1, s.len() - 1);
        let (a, b) = (s[i - 1], s[i]);
        let slope = (b[1] - a[1]) / (b[0] - a[0]);
        (a[1] + slope * (v - a[0]), slope)
    }
}

/// What the lower (non-degeneracy) bound is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coercivity {
    /// `f ≥ c|X|ᵖ − C`.
    Gradient,
    /// `f ≥ c distᵖ(X, SO(n)) − Cδᵖ`.
    DistSo,
    /// `f ≥ c|X_sym|ᵖ − C`.
    SymGradient,
}

/// The invariance a density is expected to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariance {
    /// `f(x, RX) = f(x, X)` for `R ∈ SO(n)`.
    Rotation,
    /// `f(x, X + W) = f(x, X)` for skew `W`.
    Skew,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBounds {
    pub beta: f64,
    pub c_low: f64,
    pub cap_c_low: f64,
    pub delta: f64,
    pub lower: Coercivity,
    pub invariance: Invariance,
}

/// An energy density `f : ℝⁿ × 𝕄ⁿˣⁿ → ℝ`.
///
/// `value` and `gradient` skip input validation; use [`eval`] and
/// [`eval_grad_x`] at API boundaries.
pub trait Density: Sync {
    fn dim(&self) -> usize;

    fn exponent(&self) -> f64;

    fn value(&self, x: &[f64], m: &Mat) -> f64;

    /// `∂f/∂X`, or `None` when no analytic derivative is available. At kinks
    /// the branch of the first well attaining the minimum is used.
    fn gradient(&self, _x: &[f64], _m: &Mat) -> Option<Mat> {
        None
    }

    fn bounds(&self) -> GrowthBounds;
}

impl Density for DensitySpec {
    fn dim(&self) -> usize {
        self.n
    }

    fn exponent(&self) -> f64 {
        self.p
    }

    fn value(&self, x: &[f64], m: &Mat) -> f64 {
        let a = self.coefficient(x);
        let p = self.p;
        let g = match self.kind {
            DensityKind::ConstantPNorm | DensityKind::TwoPhasePNorm => pow_of_sq(m.norm_sq(), p),
            DensityKind::SingleWell => pow_of_sq(dist_so_sq(m), p),
            DensityKind::MultiWell => pow_of_sq(nearest_well(m, &self.well_matrices()).1, p),
            DensityKind::LinearizedMultiWell => {
                let s = m.sym();
                let d2 = self.wells.iter().map(|u| (s - *u).norm_sq()).fold(f64::INFINITY, f64::min);
                pow_of_sq(d2, p)
            }
            DensityKind::ScalarDoubleWell => {
                let v = m[(0, 0)];
                let d = self.scalar_wells().iter().map(|w| libm::fabs(v - w)).fold(f64::INFINITY, f64::min);
                libm::pow(d, p)
            }
            DensityKind::CustomSampled => self.sampled(m[(0, 0)]).0,
        };
        a * g
    }

    fn gradient(&self, x: &[f64], m: &Mat) -> Option<Mat> {
        let a = self.coefficient(x);
        let p = self.p;
        let g = match self.kind {
            DensityKind::ConstantPNorm | DensityKind::TwoPhasePNorm => power_grad(m.norm_sq(), *m, p),
            DensityKind::SingleWell => {
                let r = m.nearest_rotation();
                power_grad(dist_so_sq(m), *m - r, p)
            }
            DensityKind::MultiWell => {
                let wm = self.well_matrices();
                let (i, d2) = nearest_well(m, &wm);
                let r = m.matmul(&wm[i].transpose()).nearest_rotation();
                power_grad(d2, *m - r.matmul(&wm[i]), p)
            }
            DensityKind::LinearizedMultiWell => {
                let s = m.sym();
                let (best, d2) = first_min(self.wells.iter().map(|u| (s - *u).norm_sq()));
                power_grad(d2, s - self.wells[best], p)
            }
            DensityKind::ScalarDoubleWell => {
                let v = m[(0, 0)];
                let wells = self.scalar_wells();
                let (best, _) = first_min(wells.iter().map(|w| libm::fabs(v - w)));
                let r = v - wells[best];
                let slope = if r == 0.0 {
                    0.0
                } else {
                    p * libm::pow(libm::fabs(r), p - 1.0) * libm::copysign(1.0, r)
                };
                Mat::diag(&[slope])
            }
            DensityKind::CustomSampled => Mat::diag(&[self.sampled(m[(0, 0)]).1]),
        };
        Some(g.scale(a))
    }

    fn bounds(&self) -> GrowthBounds {
        DensitySpec::bounds(self)
    }
}

fn first_min(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// `(s^{1/2})ᵖ`, exact for `p = 2`.
#[inline]
fn pow_of_sq(sq: f64, p: f64) -> f64 {
    if p == 2.0 {
        sq
    } else {
        libm::pow(sq, 0.5 * p)
    }
}

/// Gradient of `|D|ᵖ` composed with `D = D(X)` where `∂D/∂X` is the identity:
/// `p |D|^{p−2} D`.
#[inline]
fn power_grad(sq: f64, d: Mat, p: f64) -> Mat {
    if p == 2.0 {
        d.scale(2.0)
    } else if sq == 0.0 {
        Mat::zeros(d.dim())
    } else {
        d.scale(p * libm::pow(sq, 0.5 * p - 1.0))
    }
}

/// Index and squared distance of the nearest set `SO(n)Aᵢ`.
fn nearest_well(m: &Mat, wells: &[Mat]) -> (usize, f64) {
    first_min(wells.iter().map(|a| dist_to_well_sq(m, a)))
}

/// `dist²(X, SO(n)A) = min_R |X − RA|²`.
pub fn dist_to_well_sq(m: &Mat, a: &Mat) -> f64 {
    let r = m.matmul(&a.transpose()).nearest_rotation();
    (*m - r.matmul(a)).norm_sq()
}

/// Squared distance to SO(n), computed from the singular values.
///
/// With `σ₁ ≥ … ≥ σₙ` and `s = sign(det X)`, the nearest proper rotation
/// gives `dist² = Σ_{i<n} (σᵢ − 1)² + (s σₙ − 1)²`.
pub fn dist_so_sq(m: &Mat) -> f64 {
    let snap = |v: f64| if libm::fabs(v) <= UNIT_SNAP { 0.0 } else { v };
    match m.dim() {
        1 => {
            let d = snap(m[(0, 0)] - 1.0);
            d * d
        }
        2 => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let q = libm::hypot(a + d, c - b);
            let r = libm::hypot(a - d, b + c);
            // (q − r)/2 carries the sign of det X.
            let s1 = snap(0.5 * (q + r) - 1.0);
            let s2 = snap(0.5 * (q - r) - 1.0);
            s1 * s1 + s2 * s2
        }
        _ => {
            let (_, sig, _) = m.svd();
            let s = if m.det() < 0.0 { -1.0 } else { 1.0 };
            let d0 = snap(sig[0] - 1.0);
            let d1 = snap(sig[1] - 1.0);
            let d2 = snap(s * sig[2] - 1.0);
            d0 * d0 + d1 * d1 + d2 * d2
        }
    }
}

/// `dist(X, SO(n))`.
pub fn dist_so(m: &Mat) -> f64 {
    libm::sqrt(dist_so_sq(m))
}

fn check_inputs<D: Density + ?Sized>(d: &D, x: &[f64], m: &Mat) -> Result<()> {
    let n = d.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.dim(),
        });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("matrix argument"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point"));
    }
    Ok(())
}

/// Evaluates `f(x, X)` after validating dimensions and finiteness.
pub fn eval<D: Density + ?Sized>(d: &D, x: &[f64], m: &Mat) -> Result<f64> {
    check_inputs(d, x, m)?;
    Ok(d.value(x, m))
}

/// `∂f/∂X`, falling back to central differences with step `1e−6 (1 + |X|)`
/// when the density has no analytic derivative.
pub fn eval_grad_x<D: Density + ?Sized>(d: &D, x: &[f64], m: &Mat) -> Result<Mat> {
    check_inputs(d, x, m)?;
    Ok(d.gradient(x, m).unwrap_or_else(|| fd_gradient(d, x, m)))
}

pub(crate) fn fd_gradient<D: Density + ?Sized>(d: &D, x: &[f64], m: &Mat) -> Mat {
    let n = m.dim();
    let h = 1e-6 * (1.0 + m.norm());
    let mut g = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut plus = *m;
            let mut minus = *m;
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            g[(i, j)] = (d.value(x, &plus) - d.value(x, &minus)) / (2.0 * h);
        }
    }
    g
}

/// `δ⁻ᵖ f(x, I + δX)`: the geometrically linearized rescaling of `inner`.
#[derive(Debug, Clone, Copy)]
pub struct Linearized<'a, D: ?Sized> {
    pub inner: &'a D,
    pub delta: f64,
}

impl<D: Density + ?Sized> Density for Linearized<'_, D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn exponent(&self) -> f64 {
        self.inner.exponent()
    }

    fn value(&self, x: &[f64], m: &Mat) -> f64 {
        let n = m.dim();
        let y = Mat::identity(n) + m.scale(self.delta);
        self.inner.value(x, &y) / libm::pow(self.delta, self.inner.exponent())
    }

    fn gradient(&self, x: &[f64], m: &Mat) -> Option<Mat> {
        let n = m.dim();
        let y = Mat::identity(n) + m.scale(self.delta);
        let g = self.inner.gradient(x, &y)?;
        Some(g.scale(libm::pow(self.delta, 1.0 - self.inner.exponent())))
    }

    fn bounds(&self) -> GrowthBounds {
        let b = self.inner.bounds();
        GrowthBounds {
            lower: Coercivity::SymGradient,
            invariance: Invariance::Skew,
            ..b
        }
    }
}

/// `f + λ|X|ᵖ`; returns `f` unchanged (bit for bit) when `λ = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Regularized<'a, D: ?Sized> {
    pub inner: &'a D,
    pub lambda: f64,
}

impl<D: Density + ?Sized> Density for Regularized<'_, D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn exponent(&self) -> f64 {
        self.inner.exponent()
    }

    fn value(&self, x: &[f64], m: &Mat) -> f64 {
        let f = self.inner.value(x, m);
        if self.lambda == 0.0 {
            f
        } else {
            f + self.lambda * pow_of_sq(m.norm_sq(), self.exponent())
        }
    }

    fn gradient(&self, x: &[f64], m: &Mat) -> Option<Mat> {
        let g = self.inner.gradient(x, m)?;
        if self.lambda == 0.0 {
            Some(g)
        } else {
            Some(g + power_grad(m.norm_sq(), *m, self.exponent()).scale(self.lambda))
        }
    }

    fn bounds(&self) -> GrowthBounds {
        let b = self.inner.bounds();
        GrowthBounds {
            beta: b.beta + self.lambda,
            ..b
        }
    }
}

/// `δ⁻ᵖ W_δ(x, I + δX)`.
pub fn linearize<D: Density + ?Sized>(spec: &D, x: &[f64], m: &Mat, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("linearization needs delta > 0"));
    }
    eval(&Linearized { inner: spec, delta }, x, m)
}

/// The correction `q(δX) = √((I+δX)ᵀ(I+δX)) − I − δX_sym` from the polar
/// decomposition `I + δX = QY`.
pub fn polar_correction(m: &Mat, delta: f64) -> Result<Mat> {
    if !m.is_finite() || !delta.is_finite() {
        return Err(Error::NonFinite("polar correction input"));
    }
    let n = m.dim();
    let f = Mat::identity(n) + m.scale(delta);
    let det = f.det();
    if !(det > 0.0) {
        return Err(Error::OrientationReversing { det });
    }
    let y = f.transpose().matmul(&f).sqrt_psd();
    Ok(y - Mat::identity(n) - m.sym().scale(delta))
}

/// Smallest `C` with `|q(δX)| ≤ C min{|δX|, |δX|²}` over the given `δ`s.
pub fn fit_polar_constant(m: &Mat, deltas: &[f64]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &d in deltas {
        let q = polar_correction(m, d)?.norm();
        let s = m.norm() * d;
        if s > 0.0 {
            c = c.max(q / s.min(s * s));
        }
    }
    Ok(c)
}

/// Sampling parameters of [`equivalence_metric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceOptions {
    /// Radius of the matrix ball `|X| ≤ R`.
    pub radius: f64,
    /// Half-width of the spatial window `(−T, T)ⁿ`.
    pub half_width: f64,
    /// Spatial samples per unit length.
    pub nx: usize,
    /// Matrix-lattice points per unit length in each entry.
    pub n_mat: usize,
    /// Restrict the matrix net to symmetric matrices.
    pub sym_only: bool,
}

/// Matrices with entries in `(1/n_mat)ℤ` and `|X| ≤ radius`; restricted to
/// symmetric matrices when `sym_only`. The net grows monotonically with the
/// radius.
pub fn matrix_net(n: usize, radius: f64, n_mat: usize, sym_only: bool) -> Result<Vec<Mat>> {
    if n_mat == 0 || !(radius > 0.0) {
        return Err(Error::invalid("matrix net needs radius > 0 and n_mat >= 1"));
    }
    let h = 1.0 / n_mat as f64;
    let m = libm::floor(radius * n_mat as f64 + 1e-9) as i64;
    let slots: Vec<(usize, usize)> = if sym_only {
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
    } else {
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
    };
    let side = (2 * m + 1) as u64;
    let total = side.checked_pow(slots.len() as u32).unwrap_or(u64::MAX);
    if total > 50_000_000 {
        return Err(Error::invalid(alloc::format!("matrix net of {total} points is too large")));
    }
    let r2 = radius * radius * (1.0 + 1e-12);
    let mut out = Vec::new();
    let mut idx = vec![-m; slots.len()];
    loop {
        let mut x = Mat::zeros(n);
        for (&(i, j), &k) in slots.iter().zip(&idx) {
            x[(i, j)] = k as f64 * h;
            if sym_only {
                x[(j, i)] = k as f64 * h;
            }
        }
        if x.norm_sq() <= r2 {
            out.push(x);
        }
        let mut c = 0;
        loop {
            if c == idx.len() {
                return Ok(out);
            }
            idx[c] += 1;
            if idx[c] > m {
                idx[c] = -m;
                c += 1;
            } else {
                break;
            }
        }
    }
}

/// Average over a uniform grid on `(−T, T)ⁿ` of the maximum over a finite
/// matrix net of `|f − g|`.
///
/// Both suprema are replaced by maxima over finite samples, so the result
/// under-estimates the exact quantity.
pub fn equivalence_metric<F, G>(f: &F, g: &G, opts: &EquivalenceOptions) -> Result<f64>
where
    F: Density + ?Sized,
    G: Density + ?Sized,
{
    let n = f.dim();
    if g.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: g.dim(),
        });
    }
    if !(opts.half_width > 0.0) || opts.nx == 0 {
        return Err(Error::invalid("equivalence metric needs T > 0 and nx >= 1"));
    }
    let net = matrix_net(n, opts.radius, opts.n_mat, opts.sym_only)?;
    let per_axis = libm::round(2.0 * opts.half_width * opts.nx as f64).max(1.0) as usize;
    let step = 2.0 * opts.half_width / per_axis as f64;
    let count = per_axis.pow(n as u32);
    let mut total = 0.0;
    let mut x = [0.0; MAX_DIM];
    for lin in 0..count {
        let mut rem = lin;
        for xi in x.iter_mut().take(n) {
            *xi = -opts.half_width + ((rem % per_axis) as f64 + 0.5) * step;
            rem /= per_axis;
        }
        let xs = &x[..n];
        let worst = net
            .iter()
            .map(|m| libm::fabs(f.value(xs, m) - g.value(xs, m)))
            .fold(0.0, f64::max);
        total += worst;
    }
    Ok(total / count as f64)
}

/// A sampled counterexample to one of the admissibility conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub x: Vec<f64>,
    pub m: Mat,
    /// The rotation `R` (or the skew perturbation for linearized kinds).
    pub transform: Mat,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    pub witness: Option<Witness>,
}

impl CheckOutcome {
    fn pass() -> Self {
        CheckOutcome {
            passed: true,
            witness: None,
        }
    }

    fn record(&mut self, w: Witness) {
        if self.passed {
            self.passed = false;
            self.witness = Some(w);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub frame_indifferent: CheckOutcome,
    pub growth_upper: CheckOutcome,
    pub nondegeneracy: CheckOutcome,
    pub samples_used: usize,
}

impl AdmissibilityReport {
    pub fn all_pass(&self) -> bool {
        self.frame_indifferent.passed && self.growth_upper.passed && self.nondegeneracy.passed
    }
}

/// Haar-distributed rotation: Gram–Schmidt on a Gaussian matrix with the
/// column signs fixed by the diagonal of the triangular factor and the
/// determinant corrected to +1.
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    loop {
        let g = random_gaussian(n, rng);
        let mut q = Mat::zeros(n);
        let mut ok = true;
        for j in 0..n {
            let mut c = g.col(j);
            for k in 0..j {
                let qk = q.col(k);
                let proj: f64 = (0..n).map(|i| qk[i] * g.col(j)[i]).sum();
                for i in 0..n {
                    c[i] -= proj * qk[i];
                }
            }
            let nrm = libm::sqrt((0..n).map(|i| c[i] * c[i]).sum());
            if nrm < 1e-10 {
                ok = false;
                break;
            }
            for i in 0..n {
                q[(i, j)] = c[i] / nrm;
            }
        }
        if !ok {
            continue;
        }
        if q.det() < 0.0 {
            for i in 0..n {
                q[(i, 0)] = -q[(i, 0)];
            }
        }
        return q;
    }
}

pub fn random_gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    let mut g = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = rng.sample(StandardNormal);
        }
    }
    g
}

/// Randomized test of frame indifference, upper growth and non-degeneracy.
pub fn check_admissibility<D: Density + ?Sized>(d: &D, n_samples: usize, seed: u64) -> Result<AdmissibilityReport> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let n = d.dim();
    let p = d.exponent();
    let b = d.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AdmissibilityReport {
        frame_indifferent: CheckOutcome::pass(),
        growth_upper: CheckOutcome::pass(),
        nondegeneracy: CheckOutcome::pass(),
        samples_used: n_samples,
    };
    let scales = [0.1, 1.0, 3.0];
    for s in 0..n_samples {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let rot = random_rotation(n, &mut rng);
        let scale = scales[s % scales.len()];
        // Half of the samples are perturbations of a rotation.
        let m = if s % 2 == 0 {
            random_gaussian(n, &mut rng).scale(scale)
        } else {
            random_rotation(n, &mut rng) + random_gaussian(n, &mut rng).scale(0.1 * scale)
        };
        let f = d.value(&x, &m);

        let (other, transform) = match b.invariance {
            Invariance::Rotation => (d.value(&x, &rot.matmul(&m)), rot),
            Invariance::Skew => {
                let w = random_gaussian(n, &mut rng).skew().scale(scale);
                (d.value(&x, &(m + w)), w)
            }
        };
        let tol = FRAME_TOL * (1.0 + libm::fabs(f));
        if !(libm::fabs(other - f) <= tol) {
            report.frame_indifferent.record(Witness {
                x: x.clone(),
                m,
                transform,
                lhs: other,
                rhs: f,
            });
        }

        let upper = b.beta * (libm::pow(m.norm(), p) + 1.0);
        if !(f <= upper * (1.0 + 1e-12) && f >= -b.beta) {
            report.growth_upper.record(Witness {
                x: x.clone(),
                m,
                transform: Mat::identity(n),
                lhs: f,
                rhs: upper,
            });
        }

        let lower = match b.lower {
            Coercivity::Gradient => b.c_low * libm::pow(m.norm(), p) - b.cap_c_low,
            Coercivity::DistSo => b.c_low * libm::pow(dist_so(&m), p) - b.cap_c_low * libm::pow(b.delta, p),
            Coercivity::SymGradient => b.c_low * libm::pow(m.sym().norm(), p) - b.cap_c_low,
        };
        if !(f >= lower - 1e-12 * (1.0 + libm::fabs(lower))) {
            report.nondegeneracy.record(Witness {
                x,
                m,
                transform: Mat::identity(n),
                lhs: f,
                rhs: lower,
            });
        }
    }
    Ok(report)
}

/// Human-readable label of a density kind, matching the config schema.
pub fn kind_name(kind: DensityKind) -> &'static str {
    match kind {
        DensityKind::ConstantPNorm => "constant-p-norm",
        DensityKind::TwoPhasePNorm => "two-phase-p-norm",
        DensityKind::SingleWell => "single-well",
        DensityKind::MultiWell => "multi-well",
        DensityKind::LinearizedMultiWell => "linearized-multi-well",
        DensityKind::ScalarDoubleWell => "scalar-double-well",
        DensityKind::CustomSampled => "custom-sampled",
    }
}

impl core::str::FromStr for DensityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        const ALL: [DensityKind; 7] = [
            DensityKind::ConstantPNorm,
            DensityKind::TwoPhasePNorm,
            DensityKind::SingleWell,
            DensityKind::MultiWell,
            DensityKind::LinearizedMultiWell,
            DensityKind::ScalarDoubleWell,
            DensityKind::CustomSampled,
        ];
        ALL.into_iter()
            .find(|k| kind_name(*k) == s)
            .ok_or_else(|| Error::invalid(String::from("unknown density kind: ") + s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const X0: [f64; 2] = [0.3, 0.7];

    fn m2(e: [f64; 4]) -> Mat {
        Mat::from_row_major(2, &e).unwrap()
    }

    fn fd_check<D: Density>(d: &D, x: &[f64], m: &Mat) -> f64 {
        let g = d.gradient(x, m).unwrap();
        let fd = fd_gradient(d, x, m);
        (g - fd).norm() / (1.0 + fd.norm())
    }

    #[test]
    fn constant_p_norm_on_identity() {
        let d = DensitySpec::constant_p_norm(2, 2.0);
        assert_eq!(d.eval(&X0, &Mat::identity(2)).unwrap(), 2.0);
    }

    #[test]
    fn single_well_vanishes_on_rotations() {
        let d = DensitySpec::single_well(2, 2.0);
        for k in 0..16 {
            let r = Mat::rotation2(0.37 * k as f64);
            assert_eq!(d.eval(&X0, &r).unwrap(), 0.0);
        }
        let d3 = DensitySpec::single_well(3, 2.0);
        let r3 = Mat::rotation3([0.6, 0.0, 0.8], 1.1);
        assert_eq!(d3.eval(&[0.1, 0.2, 0.3], &r3).unwrap(), 0.0);
    }

    #[test]
    fn scalar_double_well_at_zero() {
        let d = DensitySpec::scalar_double_well(2.0);
        assert_eq!(d.eval(&[0.2], &Mat::diag(&[0.0])).unwrap(), 1.0);
    }

    #[test]
    fn eval_rejects_bad_input() {
        let d = DensitySpec::single_well(2, 2.0);
        assert!(matches!(
            d.eval(&X0, &Mat::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(d.eval(&X0, &Mat::diag(&[f64::NAN, 1.0])), Err(Error::NonFinite(_))));
        assert!(d.eval(&[0.1], &Mat::identity(2)).is_err());
    }

    #[test]
    fn gradients() {
        let d = DensitySpec::constant_p_norm(2, 2.0);
        let x = m2([1.0, -2.0, 0.5, 3.0]);
        assert_eq!(d.eval_grad_x(&X0, &x).unwrap(), x.scale(2.0));

        let dw = DensitySpec::scalar_double_well(2.0);
        assert_eq!(dw.eval_grad_x(&[0.0], &Mat::diag(&[2.0])).unwrap(), Mat::diag(&[2.0]));
        // Tie at 0: first well (+1) wins.
        assert_eq!(dw.eval_grad_x(&[0.0], &Mat::diag(&[0.0])).unwrap(), Mat::diag(&[-2.0]));

        let sw = DensitySpec::single_well(2, 2.0);
        assert!(fd_check(&sw, &X0, &Mat::identity(2).scale(2.0)) < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences_across_kinds() {
        let wells = vec![m2([0.3, 0.1, 0.1, -0.2]), m2([-0.2, 0.0, 0.0, 0.4])];
        let specs = [
            DensitySpec::two_phase_p_norm(2, 3.0, 1.0, 4.0),
            DensitySpec::single_well(2, 2.0),
            DensitySpec::single_well(2, 2.5),
            DensitySpec::multi_well(2, 2.0, 0.5, wells.clone()),
            DensitySpec::linearized_multi_well(2, 2.0, wells),
        ];
        let x = m2([1.3, -0.4, 0.7, 0.9]);
        for s in &specs {
            assert!(fd_check(s, &X0, &x) < 1e-5, "{:?}", s.kind);
        }
        let s3 = DensitySpec::single_well(3, 2.0);
        let x3 = Mat::from_row_major(3, &[1.1, 0.2, -0.3, 0.4, 0.8, 0.1, -0.2, 0.3, 1.4]).unwrap();
        assert!(fd_check(&s3, &[0.0; 3], &x3) < 1e-5);
    }

    #[test]
    fn dist_so_reference_values() {
        assert_eq!(dist_so(&Mat::identity(2)), 0.0);
        assert!((dist_so(&Mat::zeros(2)) - 2f64.sqrt()).abs() < 1e-12);
        assert!((dist_so(&Mat::diag(&[2.0, 1.0])) - 1.0).abs() < 1e-12);
        assert!((dist_so(&Mat::diag(&[2.0, 1.0, 1.0])) - 1.0).abs() < 1e-12);
        // Reflection: nearest rotation is I, distance 2.
        assert!((dist_so(&Mat::diag(&[1.0, -1.0])) - 2.0).abs() < 1e-12);
        assert!((dist_so(&Mat::diag(&[1.0, 1.0, -1.0])) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dist_so_matches_procrustes_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=3 {
            for _ in 0..50 {
                let m = random_gaussian(n, &mut rng);
                let r = m.nearest_rotation();
                let direct = (m - r).norm_sq();
                assert!((dist_so_sq(&m) - direct).abs() < 1e-10 * (1.0 + direct));
            }
        }
    }

    #[test]
    fn multi_well_zero_on_wells() {
        let u = m2([0.2, 0.1, 0.1, -0.3]);
        let d = DensitySpec::multi_well(2, 2.0, 0.1, vec![u]);
        let r = Mat::rotation2(0.4);
        let on = r.matmul(&(Mat::identity(2) + u.scale(0.1)));
        assert!(d.eval(&X0, &on).unwrap() < 1e-28);
        assert!(linearize(&d, &X0, &u, 0.1).unwrap() < 1e-24);
    }

    #[test]
    fn linearize_at_zero_vanishes() {
        let d = DensitySpec::single_well(2, 2.0);
        assert_eq!(linearize(&d, &X0, &Mat::zeros(2), 0.1).unwrap(), 0.0);
        assert!(linearize(&d, &X0, &Mat::zeros(2), 0.0).is_err());
    }

    #[test]
    fn linearized_single_well_approaches_sym_norm() {
        // Nonsymmetric X: δ⁻² dist²(I + δX) = |X_sym|² + O(δ).
        let d = DensitySpec::single_well(2, 2.0);
        let x = m2([0.4, 0.9, -0.3, 0.2]);
        let target = x.sym().norm_sq();
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let delta = libm::pow(10.0, -(k as f64));
            let err = (linearize(&d, &X0, &x, delta).unwrap() - target).abs();
            assert!(err <= prev);
            assert!(err <= 5.0 * delta);
            prev = err;
        }
    }

    #[test]
    fn polar_correction_symmetric_is_zero() {
        let x = m2([0.5, 0.2, 0.2, -0.3]);
        assert!(polar_correction(&x, 0.1).unwrap().norm() < 1e-14);
    }

    #[test]
    fn polar_correction_skew_is_quadratic() {
        let w = m2([0.0, -1.0, 1.0, 0.0]);
        let delta = 1e-3;
        let q = polar_correction(&w, delta).unwrap();
        // √(I + δ²WᵀW) − I = (√(1 + δ²) − 1) I  ≈ δ²/2 · I.
        let exact = (libm::sqrt(1.0 + delta * delta) - 1.0) * 2f64.sqrt();
        assert!((q.norm() - exact).abs() < 1e-15);
        let c = fit_polar_constant(&w, &[delta]).unwrap();
        assert!(q.norm() <= c * delta * delta * w.norm_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn polar_correction_rejects_inversion() {
        let x = Mat::diag(&[-20.0, 1.0]);
        assert!(matches!(polar_correction(&x, 0.1), Err(Error::OrientationReversing { .. })));
    }

    #[test]
    fn phase_lookup_is_periodic() {
        let d = DensitySpec::two_phase_p_norm(2, 2.0, 1.0, 4.0);
        assert_eq!(d.coefficient(&[0.25, 0.5]), 1.0);
        assert_eq!(d.coefficient(&[0.75, 0.5]), 4.0);
        assert_eq!(d.coefficient(&[-0.75, 3.5]), 1.0);
        assert_eq!(d.coefficient(&[2.5, 0.0]), 4.0);
    }

    #[test]
    fn validation() {
        assert!(DensitySpec::single_well(2, 1.0).validate().is_err());
        assert!(DensitySpec::multi_well(2, 2.0, 0.1, vec![]).validate().is_err());
        let asym = m2([0.0, 1.0, 0.0, 0.0]);
        assert!(DensitySpec::linearized_multi_well(2, 2.0, vec![asym]).validate().is_err());
        assert!(DensitySpec::two_phase_p_norm(2, 2.0, -1.0, 1.0).validate().is_err());
        assert!(DensitySpec::custom_sampled(2.0, vec![[1.0, 0.0], [0.0, 1.0]]).validate().is_err());
        assert!(DensitySpec::two_phase_p_norm(2, 2.0, 1.0, 4.0).validate().is_ok());
    }

    #[test]
    fn custom_sampled_interpolates() {
        let d = DensitySpec::custom_sampled(2.0, vec![[-1.0, 1.0], [0.0, 0.0], [1.0, 2.0]]);
        assert_eq!(d.eval(&[0.0], &Mat::diag(&[0.5])).unwrap(), 1.0);
        assert_eq!(d.eval(&[0.0], &Mat::diag(&[-2.0])).unwrap(), 2.0);
        assert_eq!(d.eval_grad_x(&[0.0], &Mat::diag(&[0.5])).unwrap(), Mat::diag(&[2.0]));
    }

    #[test]
    fn matrix_net_is_nested() {
        let a = matrix_net(2, 0.5, 4, true).unwrap();
        let b = matrix_net(2, 1.0, 4, true).unwrap();
        assert!(a.iter().all(|m| b.contains(m)));
        assert!(b.iter().any(|m| (m.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn matrix_net_counts() {
        let full = matrix_net(2, 0.5, 2, false).unwrap();
        let sym = matrix_net(2, 0.5, 2, true).unwrap();
        assert_eq!((full.len(), sym.len()), (9, 5));
        assert!(sym.iter().all(|m| m.is_symmetric(0.0)));
        assert_eq!(full.iter().filter(|m| !m.is_symmetric(0.0)).count(), 4);
    }

    #[test]
    fn equivalence_metric_of_constant_shift() {
        struct Shift<'a>(&'a DensitySpec, f64);
        impl Density for Shift<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn exponent(&self) -> f64 {
                2.0
            }
            fn value(&self, x: &[f64], m: &Mat) -> f64 {
                self.0.value(x, m) + self.1
            }
            fn bounds(&self) -> GrowthBounds {
                self.0.bounds()
            }
        }
        let f = DensitySpec::two_phase_p_norm(2, 2.0, 1.0, 4.0);
        let opts = EquivalenceOptions {
            radius: 1.0,
            half_width: 1.0,
            nx: 2,
            n_mat: 2,
            sym_only: false,
        };
        assert_eq!(equivalence_metric(&f, &f, &opts).unwrap(), 0.0);
        let g = Shift(&f, 0.25);
        assert!((equivalence_metric(&f, &g, &opts).unwrap() - 0.25).abs() < 1e-14);
        assert_eq!(
            equivalence_metric(&f, &g, &opts).unwrap(),
            equivalence_metric(&g, &f, &opts).unwrap()
        );
    }

    #[test]
    fn admissibility_of_shipped_families() {
        let u = m2([0.2, 0.1, 0.1, -0.3]);
        let specs = [
            DensitySpec::single_well(2, 2.0),
            DensitySpec::single_well(3, 2.0),
            DensitySpec::single_well(2, 2.0).with_layers(1.0, 4.0),
            DensitySpec::multi_well(2, 2.0, 0.2, vec![u, u.scale(-1.0)]),
            DensitySpec::constant_p_norm(2, 2.0),
            DensitySpec::linearized_multi_well(2, 2.0, vec![Mat::zeros(2)]),
        ];
        for s in &specs {
            let r = check_admissibility(s, 500, 11).unwrap();
            assert!(r.all_pass(), "{:?}: {:?}", s.kind, r);
        }
    }

    #[test]
    fn broken_density_fails_frame_indifference() {
        struct FirstEntry;
        impl Density for FirstEntry {
            fn dim(&self) -> usize {
                2
            }
            fn exponent(&self) -> f64 {
                2.0
            }
            fn value(&self, _x: &[f64], m: &Mat) -> f64 {
                m[(0, 0)] * m[(0, 0)]
            }
            fn bounds(&self) -> GrowthBounds {
                DensitySpec::constant_p_norm(2, 2.0).bounds()
            }
        }
        let r = check_admissibility(&FirstEntry, 200, 3).unwrap();
        assert!(!r.frame_indifferent.passed);
        let w = r.frame_indifferent.witness.unwrap();
        assert!((w.lhs - w.rhs).abs() > 1e-3);
        assert!((w.transform.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ["single-well", "multi-well", "custom-sampled", "constant-p-norm"] {
            assert_eq!(kind_name(k.parse().unwrap()), k);
        }
        assert!("bogus".parse::<DensityKind>().is_err());
    }
}
