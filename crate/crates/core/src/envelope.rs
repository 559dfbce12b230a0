//! Envelope bounds for `x`-independent densities: the unit-cell minimization
//! (an upper bound of the quasiconvex envelope), exact 1D convexification,
//! and rank-one lamination on a matrix lattice.

use alloc::vec;
use alloc::vec::Vec;

use crate::cell::{cell_energy_with, CellJob};
use crate::density::{Density, DensitySpec};
use crate::exec::Executor;
use crate::mat::Mat;
use crate::minimize::SolveOptions;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EnvelopeMethod {
    QcCell,
    Convex1d,
    Laminate,
}

/// Which side of the true envelope a value lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BoundSide {
    Upper,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvelopeResult {
    pub x: Mat,
    pub value: f64,
    pub method: EnvelopeMethod,
    pub bound: BoundSide,
    pub depth: Option<usize>,
    pub res: Option<usize>,
    /// Minimizer reached the gradient tolerance (cell method only).
    pub converged: bool,
}

fn require_homogeneous(spec: &DensitySpec) -> Result<()> {
    spec.validate()?;
    if !spec.is_x_independent() {
        return Err(Error::invalid("envelopes need an x-independent density"));
    }
    Ok(())
}

/// Unit-cube cell minimization of an `x`-independent density.
pub fn qc_cell<E: Executor>(
    spec: &DensitySpec,
    x: &Mat,
    res: usize,
    opts: &SolveOptions,
    exec: &E,
) -> Result<EnvelopeResult> {
    require_homogeneous(spec)?;
    let job = CellJob::new(spec.clone(), *x, 1, res).with_opts(opts.clone());
    let r = cell_energy_with(&job, &[], exec)?;
    Ok(EnvelopeResult {
        x: *x,
        value: r.m_value,
        method: EnvelopeMethod::QcCell,
        bound: BoundSide::Upper,
        depth: None,
        res: Some(res),
        converged: r.solve.converged,
    })
}

/// Piecewise-linear lower convex hull of scalar samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull1d {
    /// Hull vertices, strictly increasing in the abscissa.
    pub vertices: Vec<[f64; 2]>,
}

impl Hull1d {
    /// Hull value at `x`, or `None` outside the sampled interval.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let v = &self.vertices;
        if !(x >= v[0][0] && x <= v[v.len() - 1][0]) {
            return None;
        }
        let i = v.partition_point(|p| p[0] < x);
        if i == 0 {
            return Some(v[0][1]);
        }
        let (a, b) = (v[i - 1], v[i]);
        let t = (x - a[0]) / (b[0] - a[0]);
        Some(a[1] + t * (b[1] - a[1]))
    }
}

/// Lower convex hull by the monotone chain.
pub fn convexify_1d(xs: &[f64], ys: &[f64]) -> Result<Hull1d> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("samples"));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Unsorted);
    }
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b when it lies on or above the chord from a to (x, y).
            if (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push([x, y]);
    }
    Ok(Hull1d { vertices: hull })
}

/// Parameters of [`laminate`].
///
/// The lattice is `X + s·Z` with `Z` ranging over integer matrices with
/// entries in `[−K, K]`. Splits `X = λ(X + αsA) + (1−λ)(X − βsA)` use rank-one
/// `A = a⊗b` from `directions` and `1 ≤ α, β ≤ max_split`, which fixes
/// `λ = β/(α+β)`; this covers `λ ∈ {1/8, …, 7/8}` when `max_split ≥ 7`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LaminateOptions {
    pub depth: usize,
    pub spacing: f64,
    pub half_width: usize,
    pub max_split: usize,
    /// Integer vectors for `a` and `b`; empty selects the primitive set
    /// `{e₁, …, eₙ, eᵢ ± eⱼ}`.
    pub directions: Vec<Vec<i64>>,
    /// Cap on the number of lattice points.
    pub max_points: usize,
}

impl Default for LaminateOptions {
    fn default() -> Self {
        LaminateOptions {
            depth: 2,
            spacing: 0.125,
            half_width: 8,
            max_split: 8,
            directions: Vec::new(),
            max_points: 2_000_000,
        }
    }
}

fn default_directions(n: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for i in 0..n {
        let mut v = vec![0; n];
        v[i] = 1;
        out.push(v);
    }
    for i in 0..n {
        for j in i + 1..n {
            for s in [1, -1] {
                let mut v = vec![0; n];
                v[i] = 1;
                v[j] = s;
                out.push(v);
            }
        }
    }
    out
}

/// Iterated rank-one lamination bound at `X`.
///
/// Level `m + 1` takes, at every lattice point, the minimum of the level-`m`
/// value and every admissible split average of level-`m` values. Split
/// endpoints outside the lattice use the density itself, which keeps every
/// level an upper bound of the rank-one envelope and nonincreasing in depth.
pub fn laminate<E: Executor>(spec: &DensitySpec, x: &Mat, opts: &LaminateOptions, exec: &E) -> Result<EnvelopeResult> {
    require_homogeneous(spec)?;
    let n = spec.n;
    if x.dim() != n || !x.is_finite() {
        return Err(Error::invalid("X must be a finite matrix of the density's dimension"));
    }
    if opts.depth < 1 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    if !(opts.spacing > 0.0 && opts.spacing.is_finite()) || opts.max_split < 1 {
        return Err(Error::invalid("spacing must be positive and max_split at least 1"));
    }
    let dirs = if opts.directions.is_empty() {
        default_directions(n)
    } else {
        opts.directions.clone()
    };
    if dirs.iter().any(|d| d.len() != n || d.iter().all(|v| *v == 0)) {
        return Err(Error::invalid("directions must be nonzero vectors of length n"));
    }
    let dim = n * n;
    let side = 2 * opts.half_width + 1;
    let points = side.checked_pow(dim as u32).unwrap_or(usize::MAX);
    if points > opts.max_points {
        return Err(Error::LatticeTooLarge {
            points,
            cap: opts.max_points,
        });
    }
    let kw = opts.half_width as i64;
    let origin = [0.0; 3];
    let coords = |mut idx: usize| {
        let mut z = [0i64; 9];
        for c in z.iter_mut().take(dim) {
            *c = (idx % side) as i64 - kw;
            idx /= side;
        }
        z
    };
    let matrix = |z: &[i64; 9]| {
        let mut m = *x;
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += opts.spacing * z[i * n + j] as f64;
            }
        }
        m
    };
    let index = |z: &[i64; 9]| {
        let mut idx = 0usize;
        for c in (0..dim).rev() {
            if z[c] < -kw || z[c] > kw {
                return None;
            }
            idx = idx * side + (z[c] + kw) as usize;
        }
        Some(idx)
    };
    let rank_one: Vec<[i64; 9]> = {
        let mut out = Vec::new();
        for a in &dirs {
            for b in &dirs {
                let mut d = [0i64; 9];
                for i in 0..n {
                    for j in 0..n {
                        d[i * n + j] = a[i] * b[j];
                    }
                }
                if !out.contains(&d) && !out.iter().any(|o: &[i64; 9]| o.iter().zip(&d).all(|(p, q)| *p == -*q)) {
                    out.push(d);
                }
            }
        }
        out
    };
    let base: Vec<f64> = exec.map(points, |i| spec.value(&origin[..n], &matrix(&coords(i))));
    if base.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density on the lattice"));
    }
    let mut level = base.clone();
    let shifted = |z: &[i64; 9], d: &[i64; 9], t: i64| {
        let mut w = *z;
        for c in 0..dim {
            w[c] += t * d[c];
        }
        w
    };
    for _ in 0..opts.depth {
        let prev = &level;
        let lookup = |w: &[i64; 9]| match index(w) {
            Some(i) => prev[i],
            None => spec.value(&origin[..n], &matrix(w)),
        };
        level = exec.map(points, |i| {
            let z = coords(i);
            let mut best = prev[i];
            for d in &rank_one {
                for alpha in 1..=opts.max_split as i64 {
                    let plus = lookup(&shifted(&z, d, alpha));
                    for beta in 1..=opts.max_split as i64 {
                        let minus = lookup(&shifted(&z, d, -beta));
                        let lambda = beta as f64 / (alpha + beta) as f64;
                        let v = lambda * plus + (1.0 - lambda) * minus;
                        if v < best {
                            best = v;
                        }
                    }
                }
            }
            best
        });
    }
    let centre = index(&[0; 9]).unwrap_or(0);
    Ok(EnvelopeResult {
        x: *x,
        value: level[centre],
        method: EnvelopeMethod::Laminate,
        bound: BoundSide::Upper,
        depth: Some(opts.depth),
        res: None,
        converged: true,
    })
}
