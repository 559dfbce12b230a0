//! Limited-memory BFGS with Armijo backtracking, and a deterministic
//! multistart driver over nodal fields.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::StartFailure;
use crate::exec::{mix_seed, Executor};
use crate::grid::Grid;
use crate::sum::pairwise;
use crate::{Error, Result};

/// Sufficient-decrease constant of the Armijo condition.
pub const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Consecutive iterations with relative decrease below `f_tol` before stopping.
const STALL_ITERS: usize = 10;

/// A smooth (or piecewise smooth) objective on `ℝᵈ`.
#[allow(clippy::len_without_is_empty)]
pub trait Objective: Sync {
    fn len(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Returns the value and overwrites `grad` with the gradient.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Number of additive terms reported by [`Objective::value_gradient_terms`];
    /// zero when the objective does not expose them.
    fn num_terms(&self) -> usize {
        0
    }

    /// As [`Objective::value_and_gradient`], also writing the terms whose sum
    /// is the value. Energy changes are then summed term by term, which stays
    /// accurate when the change is far below the rounding error of the value.
    fn value_gradient_terms(&self, x: &[f64], grad: &mut [f64], _terms: &mut [f64]) -> f64 {
        self.value_and_gradient(x, grad)
    }
}

/// Objective built from a pair of closures.
pub struct FnObjective<F, G> {
    pub len: usize,
    pub energy: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    fn len(&self) -> usize {
        self.len
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.energy)(x)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.gradient)(x, grad);
        (self.energy)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Sup-norm gradient tolerance.
    pub g_tol: f64,
    /// Relative decrease below which iteration stops.
    pub f_tol: f64,
    /// Quasi-Newton history length.
    pub memory: usize,
    pub n_starts: usize,
    /// Random-start amplitudes, cycled across starts.
    pub amp: Vec<f64>,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 20_000,
            g_tol: 1e-8,
            f_tol: 1e-12,
            memory: 10,
            n_starts: 8,
            amp: vec![0.1, 0.5, 1.0],
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.g_tol > 0.0) || !(self.f_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.n_starts < 1 {
            return Err(Error::invalid("n_starts must be at least 1"));
        }
        if self.memory < 1 {
            return Err(Error::invalid("memory must be at least 1"));
        }
        if self.amp.is_empty() || self.amp.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::invalid("amp must be a nonempty list of nonnegative values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StartSummary {
    pub index: usize,
    pub value: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub value: f64,
    pub field: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup norm of the gradient at `field`.
    pub grad_norm: f64,
    pub start_index: usize,
    pub starts: Vec<StartSummary>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `−H g` by the two-loop recursion with `H₀ = (sᵀy / yᵀy) I`.
fn two_loop(g: &[f64], hist: &VecDeque<Pair>, d: &mut [f64]) {
    d.copy_from_slice(g);
    let mut alpha = vec![0.0; hist.len()];
    for (i, p) in hist.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, d);
        alpha[i] = a;
        for (dj, yj) in d.iter_mut().zip(&p.y) {
            *dj -= a * yj;
        }
    }
    if let Some(last) = hist.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        d.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, p) in hist.iter().enumerate() {
        let b = p.rho * dot(&p.y, d);
        for (dj, sj) in d.iter_mut().zip(&p.s) {
            *dj += (alpha[i] - b) * sj;
        }
    }
    d.iter_mut().for_each(|v| *v = -*v);
}

/// Minimizes `obj` from `start`.
///
/// Iterates are monotone: a step is accepted only if it satisfies the Armijo
/// condition. When the quasi-Newton direction is not a descent direction the
/// history is dropped and steepest descent is used. The best iterate is
/// returned even when the tolerances are not met (`converged = false`).
pub fn minimize<O: Objective + ?Sized>(obj: &O, start: Vec<f64>, opts: &SolveOptions) -> Result<SolveResult> {
    run(obj, start, opts).map_err(|reason| Error::AllStartsFailed(vec![StartFailure { start_index: 0, reason }]))
}

fn run<O: Objective + ?Sized>(obj: &O, start: Vec<f64>, opts: &SolveOptions) -> core::result::Result<SolveResult, String> {
    let dim = obj.len();
    if start.len() != dim {
        return Err(format!("start has length {}, objective expects {dim}", start.len()));
    }
    let mut x = start;
    let mut g = vec![0.0; dim];
    let nt = obj.num_terms();
    let mut terms = vec![0.0; nt];
    let mut terms_new = vec![0.0; nt];
    let mut f = obj.value_gradient_terms(&x, &mut g, &mut terms);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(String::from("non-finite energy or gradient at the start"));
    }
    let mut hist: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; dim];
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut iterations = 0;
    let mut gnorm = sup_norm(&g);
    let (f0, g0, x0) = (f, gnorm, x.clone());
    let mut stalled = 0;
    while gnorm > opts.g_tol && iterations < opts.max_iter {
        two_loop(&g, &hist, &mut d);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) || !slope.is_finite() {
            hist.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
        }
        let mut accepted = None;
        loop {
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                for i in 0..dim {
                    x_new[i] = x[i] + t * d[i];
                }
                let fv = obj.value_gradient_terms(&x_new, &mut g_new, &mut terms_new);
                let change = if nt > 0 {
                    pairwise(0, nt, &|i| terms_new[i] - terms[i])
                } else {
                    fv - f
                };
                if fv.is_finite() && change <= ARMIJO_C1 * t * slope && g_new.iter().all(|v| v.is_finite()) {
                    accepted = Some((fv, change));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || hist.is_empty() {
                break;
            }
            // Quasi-Newton direction failed; retry along steepest descent.
            hist.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
        }
        let Some((f_new, change)) = accepted else {
            break;
        };
        iterations += 1;
        let mut s = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        for i in 0..dim {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        let sy = dot(&s, &y);
        if sy > 1e-300 && sy > f64::EPSILON * libm::sqrt(dot(&s, &s) * dot(&y, &y)) {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        let decrease = -change;
        core::mem::swap(&mut x, &mut x_new);
        core::mem::swap(&mut g, &mut g_new);
        core::mem::swap(&mut terms, &mut terms_new);
        let scale = libm::fabs(f).max(libm::fabs(f_new)).max(f64::MIN_POSITIVE);
        f = f_new;
        gnorm = sup_norm(&g);
        if decrease <= opts.f_tol * scale {
            stalled += 1;
            if stalled >= STALL_ITERS {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    if f > f0 {
        // Only reachable through rounding in the term-wise decrease test.
        return Ok(SolveResult {
            value: f0,
            field: x0,
            iterations,
            converged: g0 <= opts.g_tol,
            grad_norm: g0,
            start_index: 0,
            starts: Vec::new(),
        });
    }
    Ok(SolveResult {
        value: f,
        field: x,
        iterations,
        converged: gnorm <= opts.g_tol,
        grad_norm: gnorm,
        start_index: 0,
        starts: Vec::new(),
    })
}

/// The random start with the given index: node-major values uniform in
/// `[−amp, amp]` with `amp = opts.amp[(index − 1) mod len] · scale`, zero on
/// masked nodes. Index 0 is the zero field.
pub fn random_start(grid: &Grid, opts: &SolveOptions, index: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; grid.num_dofs()];
    if index == 0 {
        return v;
    }
    let amp = opts.amp[(index - 1) % opts.amp.len()] * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, index as u64));
    for x in v.iter_mut() {
        *x = amp * (2.0 * rng.random::<f64>() - 1.0);
    }
    grid.apply_mask(&mut v);
    v
}

/// Runs [`minimize`] from the zero field and `n_starts − 1` random fields
/// (amplitude scale `h`, one mesh width) and returns the best result.
pub fn multistart<O, E>(obj: &O, grid: &Grid, opts: &SolveOptions, exec: &E) -> Result<SolveResult>
where
    O: Objective + ?Sized,
    E: Executor,
{
    multistart_with(obj, grid, opts, grid.h(), &[], exec)
}

/// [`multistart`] with an explicit amplitude scale and additional warm
/// starts, which receive indices `n_starts, n_starts + 1, …`.
///
/// Ties in value are broken by the lower start index.
pub fn multistart_with<O, E>(
    obj: &O,
    grid: &Grid,
    opts: &SolveOptions,
    amp_scale: f64,
    warm: &[Vec<f64>],
    exec: &E,
) -> Result<SolveResult>
where
    O: Objective + ?Sized,
    E: Executor,
{
    opts.validate()?;
    if obj.len() != grid.num_dofs() {
        return Err(Error::DimensionMismatch {
            expected: grid.num_dofs(),
            found: obj.len(),
        });
    }
    let total = opts.n_starts + warm.len();
    let outcomes = exec.map(total, |i| {
        let start = if i < opts.n_starts {
            random_start(grid, opts, i, amp_scale)
        } else {
            let mut w = warm[i - opts.n_starts].clone();
            grid.apply_mask(&mut w);
            w
        };
        run(obj, start, opts)
    });
    let mut best: Option<SolveResult> = None;
    let mut starts = Vec::with_capacity(total);
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(mut r) => {
                starts.push(StartSummary {
                    index: i,
                    value: Some(r.value),
                    iterations: r.iterations,
                    converged: r.converged,
                    failure: None,
                });
                r.start_index = i;
                if best.as_ref().is_none_or(|b| r.value < b.value) {
                    best = Some(r);
                }
            }
            Err(reason) => starts.push(StartSummary {
                index: i,
                value: None,
                iterations: 0,
                converged: false,
                failure: Some(reason),
            }),
        }
    }
    match best {
        Some(mut b) => {
            b.starts = starts;
            Ok(b)
        }
        None => Err(Error::AllStartsFailed(
            starts
                .into_iter()
                .map(|s| StartFailure {
                    start_index: s.index,
                    reason: s.failure.unwrap_or_default(),
                })
                .collect(),
        )),
    }
}
