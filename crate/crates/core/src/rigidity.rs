//! Discrete estimates of Korn and geometric-rigidity constants, the
//! Zhang-type lower bound check and the Gårding diagnostic.
//!
//! Every constant here is a supremum approximated from below: the reported
//! value is a lower bound of the true constant.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::{dist_so, random_rotation, Density, DensitySpec};
use crate::envelope::qc_cell;
use crate::exec::{mix_seed, Executor};
use crate::grid::Grid;
use crate::mat::{Mat, MAX_DIM};
use crate::minimize::{minimize, multistart_with, Objective, SolveOptions};
use crate::sum::pairwise;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ConstantKind {
    Korn,
    KornNonlinear,
    Rigidity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EstimateMethod {
    /// Quasi-Newton ascent on the quotient.
    Ascent,
    /// Random fields only; used off `p = 2`.
    RandomSearch,
    /// Maximum over a supplied sample set.
    Samples,
}

/// A discrete lower bound of an inequality constant.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ConstantEstimate {
    pub value: f64,
    pub kind: ConstantKind,
    pub method: EstimateMethod,
    pub p: f64,
    pub n: usize,
    pub k: usize,
    pub res: usize,
    /// Samples (fields or starts) that produced a ratio.
    pub samples_used: usize,
    /// Samples skipped because the denominator vanished.
    pub skipped: usize,
    /// Always `"lower bound of true constant"`.
    pub certified_side: &'static str,
}

/// Stamp carried by every [`ConstantEstimate`].
pub const LOWER_BOUND: &str = "lower bound of true constant";

fn vertex_values(grid: &Grid, u: &[f64], e: usize) -> ([[f64; MAX_DIM]; MAX_DIM + 1], usize) {
    let n = grid.dim();
    let mut out = [[0.0; MAX_DIM]; MAX_DIM + 1];
    let verts = grid.element_vertices(e);
    for (j, &v) in verts.iter().enumerate() {
        out[j][..n].copy_from_slice(&u[v * n..(v + 1) * n]);
    }
    (out, verts.len())
}

/// Scatters `dG` (derivative with respect to the element gradient) onto the
/// nodal gradient.
fn scatter(grid: &Grid, e: usize, dg: &Mat, w: f64, out: &mut [f64]) {
    let n = grid.dim();
    let grads = grid.shape_gradients(e);
    for (j, &v) in grid.element_vertices(e).iter().enumerate() {
        for a in 0..n {
            let mut acc = 0.0;
            for b in 0..n {
                acc += dg[(a, b)] * grads[j][b];
            }
            out[v * n + a] += w * acc;
        }
    }
}

/// `(‖e(u)‖ + ‖u‖) / ‖∇u‖` in L², with the exact P1 mass matrix.
struct KornQuotient<'a> {
    grid: &'a Grid,
}

impl KornQuotient<'_> {
    fn parts(&self, u: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let g = self.grid;
        let n = g.dim();
        let vol = g.element_volume();
        let mass = vol / ((n + 1) * (n + 2)) as f64;
        let ne = g.num_elements();
        let gsq = pairwise(0, ne, &|e| vol * g.element_gradient(u, e).norm_sq());
        let esq = pairwise(0, ne, &|e| vol * g.element_gradient(u, e).sym().norm_sq());
        let usq = pairwise(0, ne, &|e| {
            let (vals, m) = vertex_values(g, u, e);
            let mut s = 0.0;
            for a in 0..n {
                let mut sum = 0.0;
                for v in vals.iter().take(m) {
                    s += v[a] * v[a];
                    sum += v[a];
                }
                s += sum * sum;
            }
            mass * s
        });
        let (gn, en, un) = (libm::sqrt(gsq), libm::sqrt(esq), libm::sqrt(usq));
        let q = (en + un) / gn;
        if let Some(out) = grad {
            out.fill(0.0);
            // dQ = (d‖e‖ + d‖u‖)/‖∇u‖ − Q d‖∇u‖/‖∇u‖, with d‖·‖ = d(‖·‖²)/(2‖·‖).
            let ce = if en > 0.0 { 1.0 / (en * gn) } else { 0.0 };
            let cg = q / (gn * gn);
            for e in 0..ne {
                let gr = g.element_gradient(u, e);
                let dg = gr.sym().scale(ce) - gr.scale(cg);
                scatter(g, e, &dg, vol, out);
            }
            if un > 0.0 {
                let cu = 1.0 / (un * gn);
                for e in 0..ne {
                    let (vals, m) = vertex_values(g, u, e);
                    let verts = g.element_vertices(e);
                    for a in 0..n {
                        let sum: f64 = vals.iter().take(m).map(|v| v[a]).sum();
                        for (j, &v) in verts.iter().enumerate() {
                            out[v * n + a] += cu * mass * (vals[j][a] + sum);
                        }
                    }
                }
            }
        }
        q
    }
}

impl Objective for KornQuotient<'_> {
    fn len(&self) -> usize {
        self.grid.num_dofs()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.parts(u, None)
    }

    fn value_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.parts(u, Some(grad))
    }
}

/// Midpoint-rule `∫|u|ᵖ` and `∫|∇u|ᵖ` on the grid.
fn lp_parts(grid: &Grid, u: &[f64], p: f64) -> (f64, f64, f64) {
    let n = grid.dim();
    let vol = grid.element_volume();
    let ne = grid.num_elements();
    let pw = |sq: f64| libm::pow(sq, 0.5 * p);
    let grad = pairwise(0, ne, &|e| vol * pw(grid.element_gradient(u, e).norm_sq()));
    let sym = pairwise(0, ne, &|e| vol * pw(grid.element_gradient(u, e).sym().norm_sq()));
    let val = pairwise(0, ne, &|e| {
        let (vals, m) = vertex_values(grid, u, e);
        let mut sq = 0.0;
        for a in 0..n {
            let mean: f64 = vals.iter().take(m).map(|v| v[a]).sum::<f64>() / m as f64;
            sq += mean * mean;
        }
        vol * pw(sq)
    });
    (grad, sym, val)
}

/// Lower bound of the Korn constant `‖∇u‖ ≤ C(‖e(u)‖ + ‖u‖)` on the
/// (unconstrained) grid domain.
///
/// For `p = 2` the quotient is minimized by quasi-Newton descent from
/// `opts.n_starts − 1` random fields (the zero start is degenerate and is
/// rejected). Other `p` use random fields only and are flagged as
/// [`EstimateMethod::RandomSearch`].
pub fn korn_constant<E: Executor>(grid: &Grid, p: f64, opts: &SolveOptions, exec: &E) -> Result<ConstantEstimate> {
    opts.validate()?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("p must exceed 1"));
    }
    let grid = grid.unconstrained();
    let (value, method, used) = if p == 2.0 {
        let obj = KornQuotient { grid: &grid };
        // Q is scale invariant and its nodal gradient carries the element
        // volume, so starts are sized like h and the tolerance like |T|.
        let kopts = SolveOptions {
            g_tol: opts.g_tol * grid.element_volume(),
            ..opts.clone()
        };
        // Noise starts fall into spurious local minima under refinement, so
        // smooth near-rotations join them.
        let warm: Vec<Vec<f64>> = (0..opts.n_starts.div_ceil(2))
            .map(|i| near_rotation(&grid, mix_seed(opts.seed ^ 0x4b4f_524e, i as u64)))
            .collect();
        let r = multistart_with(&obj, &grid, &kopts, grid.h(), &warm, exec)?;
        let used = r.starts.iter().filter(|s| s.value.is_some()).count();
        (1.0 / r.value, EstimateMethod::Ascent, used)
    } else {
        let count = 64 * opts.n_starts;
        let ratios = exec.map(count, |i| {
            let u = random_field(&grid, mix_seed(opts.seed, i as u64), i);
            let (g, e, v) = lp_parts(&grid, &u, p);
            let den = libm::pow(e, 1.0 / p) + libm::pow(v, 1.0 / p);
            if den > 0.0 {
                libm::pow(g, 1.0 / p) / den
            } else {
                f64::NAN
            }
        });
        let used = ratios.iter().filter(|r| r.is_finite()).count();
        let best = ratios.iter().copied().filter(|r| r.is_finite()).fold(f64::NAN, f64::max);
        (best, EstimateMethod::RandomSearch, used)
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Degenerate("no admissible Korn quotient"));
    }
    Ok(ConstantEstimate {
        value,
        kind: ConstantKind::Korn,
        method,
        p,
        n: grid.dim(),
        k: grid.side_length(),
        res: grid.res(),
        samples_used: used,
        skipped: 0,
        certified_side: LOWER_BOUND,
    })
}

/// Infinitesimal rotation about a random centre plus a small random strain.
fn near_rotation(grid: &Grid, seed: u64) -> Vec<f64> {
    let n = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = grid.side_length() as f64;
    let mut a = Mat::zeros(n);
    let mut c = [0.0; MAX_DIM];
    for i in 0..n {
        c[i] = side * rng.random::<f64>();
        for j in 0..n {
            let s = 0.1 * (2.0 * rng.random::<f64>() - 1.0);
            a[(i, j)] += s;
            if j > i {
                let w = 2.0 * rng.random::<f64>() - 1.0;
                a[(i, j)] += w;
                a[(j, i)] -= w;
            }
        }
    }
    let mut u = vec![0.0; grid.num_dofs()];
    for id in 0..grid.num_nodes() {
        let x = grid.node_coords(id);
        for r in 0..n {
            u[id * n + r] = (0..n).map(|b| a[(r, b)] * (x[b] - c[b])).sum();
        }
    }
    u
}

/// Random test field: even indices are nodal noise, odd ones an infinitesimal
/// rotation about a random centre plus noise.
fn random_field(grid: &Grid, seed: u64, index: usize) -> Vec<f64> {
    let n = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![0.0; grid.num_dofs()];
    let mut w = Mat::zeros(n);
    let mut c = [0.0; MAX_DIM];
    let side = grid.side_length() as f64;
    for i in 0..n {
        c[i] = side * rng.random::<f64>();
        for j in i + 1..n {
            let v = 2.0 * rng.random::<f64>() - 1.0;
            w[(i, j)] = v;
            w[(j, i)] = -v;
        }
    }
    let noise = if index.is_multiple_of(2) { 1.0 } else { 0.05 };
    for id in 0..grid.num_nodes() {
        let x = grid.node_coords(id);
        for a in 0..n {
            let mut v = noise * (2.0 * rng.random::<f64>() - 1.0);
            if index % 2 == 1 {
                v += (0..n).map(|b| w[(a, b)] * (x[b] - c[b])).sum::<f64>();
            }
            u[id * n + a] = v;
        }
    }
    u
}

/// Deformations `y(x) = R(x + a·u(x))` with `R` uniform on SO(n), `u` a
/// random test field and `a` cycling through `amps`. Sample 0 is the rigid
/// motion `y = Rx`.
pub fn deformation_samples(grid: &Grid, count: usize, amps: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    if amps.is_empty() || amps.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::invalid("amplitudes must be finite and nonnegative"));
    }
    let n = grid.dim();
    let id = Mat::identity(n);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let s = mix_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let r = random_rotation(n, &mut rng);
        let a = if i == 0 { 0.0 } else { amps[(i - 1) % amps.len()] };
        let mut y = grid.affine_field(&id, false).values;
        if a > 0.0 {
            let u = random_field(grid, s, i);
            for (v, du) in y.iter_mut().zip(&u) {
                *v += a * du;
            }
        }
        for node in y.chunks_mut(n) {
            let mut t = [0.0; MAX_DIM];
            for (ta, row) in t.iter_mut().zip(0..n) {
                *ta = (0..n).map(|b| r[(row, b)] * node[b]).sum();
            }
            node.copy_from_slice(&t[..n]);
        }
        out.push(y);
    }
    Ok(out)
}

/// Element gradients of a deformation given by nodal values.
pub fn element_gradients(grid: &Grid, y: &[f64]) -> Result<Vec<Mat>> {
    if y.len() != grid.num_dofs() {
        return Err(Error::DimensionMismatch {
            expected: grid.num_dofs(),
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("deformation"));
    }
    Ok((0..grid.num_elements()).map(|e| grid.element_gradient(y, e)).collect())
}

/// Nodal values of the deformation `x ↦ Xx + φ(x)`.
pub fn deformation(grid: &Grid, x: &Mat, phi: &[f64]) -> Result<Vec<f64>> {
    if phi.len() != grid.num_dofs() {
        return Err(Error::DimensionMismatch {
            expected: grid.num_dofs(),
            found: phi.len(),
        });
    }
    let mut y = grid.affine_field(x, false).values;
    for (a, b) in y.iter_mut().zip(phi) {
        *a += b;
    }
    Ok(y)
}

fn lp_distance(grads: &[Mat], vol: f64, p: f64, r: &Mat) -> f64 {
    pairwise(0, grads.len(), &|e| vol * libm::pow((grads[e] - *r).norm_sq(), 0.5 * p))
}

/// The rotation minimizing `Σ_T |T| |F_T − R|ᵖ`.
///
/// For `p = 2` this is the polar factor of the mean gradient. Otherwise the
/// search runs over the angle (n = 2) or an axis-angle net (n = 3), seeded
/// with the `p = 2` solution and refined locally.
pub fn optimal_rotation(grads: &[Mat], vol: f64, p: f64) -> Mat {
    let n = grads.first().map_or(1, |g| g.dim());
    let mut mean = Mat::zeros(n);
    for g in grads {
        mean += *g;
    }
    let r2 = mean.nearest_rotation();
    if p == 2.0 || n == 1 {
        return r2;
    }
    let cost = |r: &Mat| lp_distance(grads, vol, p, r);
    let mut best = r2;
    let mut best_cost = cost(&r2);
    if n == 2 {
        let mut theta = libm::atan2(r2[(1, 0)], r2[(0, 0)]);
        for i in 0..360 {
            let t = core::f64::consts::TAU * i as f64 / 360.0;
            let c = cost(&Mat::rotation2(t));
            if c < best_cost {
                best_cost = c;
                theta = t;
            }
        }
        let mut step = core::f64::consts::TAU / 360.0;
        while step > 1e-12 {
            let mut moved = false;
            for t in [theta - step, theta + step] {
                let c = cost(&Mat::rotation2(t));
                if c < best_cost {
                    best_cost = c;
                    theta = t;
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        return Mat::rotation2(theta);
    }
    // Axis-angle net: Fibonacci axes, 24 angles.
    let axes: Vec<[f64; 3]> = (0..48)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / 48.0;
            let r = libm::sqrt(1.0 - z * z);
            let phi = i as f64 * 2.399_963_229_728_653;
            [r * libm::cos(phi), r * libm::sin(phi), z]
        })
        .collect();
    for ax in &axes {
        for j in 1..24 {
            let rot = Mat::rotation3(*ax, core::f64::consts::TAU * j as f64 / 24.0);
            let c = cost(&rot);
            if c < best_cost {
                best_cost = c;
                best = rot;
            }
        }
    }
    let mut step = 0.1;
    let basis = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    while step > 1e-10 {
        let mut moved = false;
        for ax in basis {
            for s in [-step, step] {
                let cand = Mat::rotation3(ax, s).matmul(&best);
                let c = cost(&cand);
                if c < best_cost {
                    best_cost = c;
                    best = cand;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}

/// Denominators below this are treated as zero.
pub const SKIP_TOL: f64 = 1e-12;

/// Lower bound of the geometric-rigidity constant from deformation samples:
/// the maximum over samples of `‖∇y − R*‖_p / ‖dist(∇y, SO(n))‖_p`.
/// Samples with vanishing denominator are skipped and counted.
pub fn rigidity_ratio<E: Executor>(grid: &Grid, samples: &[Vec<f64>], p: f64, exec: &E) -> Result<ConstantEstimate> {
    if samples.is_empty() {
        return Err(Error::invalid("empty sample set"));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("p must be at least 1"));
    }
    let vol = grid.element_volume();
    let per = exec.map(samples.len(), |i| -> Result<Option<f64>> {
        let grads = element_gradients(grid, &samples[i])?;
        let den = pairwise(0, grads.len(), &|e| vol * libm::pow(dist_so(&grads[e]), p));
        if libm::pow(den, 1.0 / p) < SKIP_TOL {
            return Ok(None);
        }
        let r = optimal_rotation(&grads, vol, p);
        let num = lp_distance(&grads, vol, p, &r);
        Ok(Some(libm::pow(num / den, 1.0 / p)))
    });
    let mut value = f64::NAN;
    let (mut used, mut skipped) = (0, 0);
    for r in per {
        match r? {
            Some(v) => {
                used += 1;
                value = value.max(v);
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every sample lies on SO(n)"));
    }
    Ok(ConstantEstimate {
        value,
        kind: ConstantKind::Rigidity,
        method: EstimateMethod::Samples,
        p,
        n: grid.dim(),
        k: grid.side_length(),
        res: grid.res(),
        samples_used: used,
        skipped,
        certified_side: LOWER_BOUND,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZhangRow {
    pub x: Mat,
    /// Cell upper bound of the envelope at `X`.
    pub qc: f64,
    /// `slack · C⁻ᵖ · distᵖ(X, SO(n))`.
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZhangReport {
    pub rows: Vec<ZhangRow>,
    pub all_pass: bool,
}

/// Compares the cell envelope of `distᵖ(·, SO(n))` against
/// `slack · C⁻ᵖ distᵖ` at each sample. Negative margins are discretization
/// diagnostics: the cell value over-estimates the envelope while `c_est`
/// under-estimates the constant.
pub fn zhang_check<E: Executor>(
    spec: &DensitySpec,
    xs: &[Mat],
    c_est: f64,
    slack: f64,
    res: usize,
    opts: &SolveOptions,
    exec: &E,
) -> Result<ZhangReport> {
    if spec.kind != crate::density::DensityKind::SingleWell {
        return Err(Error::invalid("zhang_check needs the single-well density"));
    }
    if !(c_est > 0.0 && c_est.is_finite()) || !(slack >= 0.0 && slack.is_finite()) {
        return Err(Error::invalid("need C > 0 and slack >= 0"));
    }
    let p = spec.p;
    let mut rows = Vec::with_capacity(xs.len());
    for x in xs {
        let qc = qc_cell(spec, x, res, opts, exec)?.value;
        let rhs = slack * libm::pow(c_est, -p) * libm::pow(dist_so(x), p);
        rows.push(ZhangRow {
            x: *x,
            qc,
            rhs,
            margin: qc - rhs,
        });
    }
    let all_pass = rows.iter().all(|r| r.margin >= 0.0);
    Ok(ZhangReport { rows, all_pass })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GardingEstimate {
    pub alpha: f64,
    pub gamma: f64,
    pub samples: usize,
    pub violations: usize,
    /// Smallest residual `F(u) − α∫|∇u|ᵖ + γ∫|u|ᵖ` seen.
    pub worst_residual: f64,
    pub worst_field: Option<Vec<f64>>,
    pub passed: bool,
}

/// `F(u) − α∫|∇u|ᵖ + γ∫|u|ᵖ` over the grid domain, with `F(u) = ∫ f(x, ∇u)`
/// and a midpoint rule for `∫|u|ᵖ`.
struct GardingResidual<'a> {
    grid: &'a Grid,
    spec: &'a DensitySpec,
    alpha: f64,
    gamma: f64,
}

impl GardingResidual<'_> {
    fn eval(&self, u: &[f64], grad: Option<&mut [f64]>) -> (f64, f64) {
        let g = self.grid;
        let n = g.dim();
        let p = self.spec.p;
        let vol = g.element_volume();
        let ne = g.num_elements();
        let pw = |sq: f64| libm::pow(sq, 0.5 * p);
        let mean = |e: usize| {
            let (vals, m) = vertex_values(g, u, e);
            let mut c = [0.0; MAX_DIM];
            for a in 0..n {
                c[a] = vals.iter().take(m).map(|v| v[a]).sum::<f64>() / m as f64;
            }
            c
        };
        let term = |e: usize| {
            let gr = g.element_gradient(u, e);
            let b = g.barycenter(e);
            let c = mean(e);
            let usq: f64 = c[..n].iter().map(|v| v * v).sum();
            let f = self.spec.value(&b[..n], &gr);
            let pos = f + self.gamma * pw(usq);
            let neg = self.alpha * pw(gr.norm_sq());
            (vol * (pos - neg), vol * (pos + neg))
        };
        let res = pairwise(0, ne, &|e| term(e).0);
        let scale = pairwise(0, ne, &|e| term(e).1);
        if let Some(out) = grad {
            out.fill(0.0);
            let pg = |sq: f64, m: Mat| {
                if sq == 0.0 {
                    Mat::zeros(n)
                } else {
                    m.scale(p * libm::pow(sq, 0.5 * p - 1.0))
                }
            };
            for e in 0..ne {
                let gr = g.element_gradient(u, e);
                let b = g.barycenter(e);
                let df = crate::density::eval_grad_x(self.spec, &b[..n], &gr).unwrap_or(Mat::zeros(n));
                let dg = df - pg(gr.norm_sq(), gr).scale(self.alpha);
                scatter(g, e, &dg, vol, out);
                let c = mean(e);
                let usq: f64 = c[..n].iter().map(|v| v * v).sum();
                if usq > 0.0 {
                    let coef = vol * self.gamma * p * libm::pow(usq, 0.5 * p - 1.0);
                    let verts = g.element_vertices(e);
                    for &v in verts {
                        for a in 0..n {
                            out[v * n + a] += coef * c[a] / verts.len() as f64;
                        }
                    }
                }
            }
        }
        (res, scale)
    }
}

impl Objective for GardingResidual<'_> {
    fn len(&self) -> usize {
        self.grid.num_dofs()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.eval(u, None).0
    }

    fn value_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(u, Some(grad)).0
    }
}

/// Iteration cap of each adversarial descent.
pub const GARDING_DESCENT_ITERS: usize = 50;

/// Samples `F(u) − α∫|∇u|ᵖ + γ∫|u|ᵖ` on `n_fields` random fields and on
/// short descents of the residual started from them. Residuals below
/// `−1e−12` times the magnitude of the terms count as violations.
pub fn garding_check<E: Executor>(
    spec: &DensitySpec,
    grid: &Grid,
    alpha: f64,
    gamma: f64,
    n_fields: usize,
    seed: u64,
    exec: &E,
) -> Result<GardingEstimate> {
    spec.validate()?;
    if spec.n != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: spec.n,
        });
    }
    if !(alpha >= 0.0 && gamma >= 0.0 && alpha.is_finite() && gamma.is_finite()) {
        return Err(Error::invalid("alpha and gamma must be nonnegative"));
    }
    if n_fields == 0 {
        return Err(Error::invalid("need at least one field"));
    }
    let obj = GardingResidual {
        grid,
        spec,
        alpha,
        gamma,
    };
    let descent = SolveOptions {
        max_iter: GARDING_DESCENT_ITERS,
        n_starts: 1,
        ..SolveOptions::default()
    };
    let per = exec.map(n_fields, |i| {
        let mut u = random_field(grid, mix_seed(seed, i as u64), i);
        grid.apply_mask(&mut u);
        let mut out = vec![(u.clone(), obj.eval(&u, None))];
        if let Ok(r) = minimize(&obj, u, &descent) {
            let v = obj.eval(&r.field, None);
            out.push((r.field, v));
        }
        out
    });
    let mut est = GardingEstimate {
        alpha,
        gamma,
        samples: 0,
        violations: 0,
        worst_residual: f64::INFINITY,
        worst_field: None,
        passed: true,
    };
    for (u, (res, scale)) in per.into_iter().flatten() {
        est.samples += 1;
        if res < -1e-12 * scale {
            est.violations += 1;
        }
        if res < est.worst_residual {
            est.worst_residual = res;
            est.worst_field = Some(u);
        }
    }
    est.passed = est.violations == 0;
    Ok(est)
}
