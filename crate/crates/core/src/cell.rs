//! Cell problems: the averaged energy `⨍ f(x, X + ∇φ)` minimized over fields
//! vanishing on the boundary of `(0, k)ⁿ`, and the `k`-sequences built on it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::density::{Density, DensityKind, DensitySpec, Linearized, Regularized};
use crate::exec::{Executor, Sequential};
use crate::grid::Grid;
use crate::mat::Mat;
use crate::minimize::{multistart_with, Objective, SolveOptions, StartSummary};
use crate::{Error, Result};

/// One cell problem.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellJob {
    pub spec: DensitySpec,
    /// Macroscopic gradient.
    pub x: Mat,
    /// Cube side.
    pub k: usize,
    /// Subdivisions per unit length.
    pub res: usize,
    /// Evaluate the integrand on `sym(X + ∇φ)`.
    pub symmetrized: bool,
    /// When positive the integrand is `δ⁻ᵖ f(x, I + δ(X + ∇φ))`.
    pub delta: f64,
    /// Weight of the added `λ|X + ∇φ|ᵖ`.
    pub lambda: f64,
    pub opts: SolveOptions,
}

impl CellJob {
    /// A plain job; symmetrized exactly when the kind is a linearized one.
    pub fn new(spec: DensitySpec, x: Mat, k: usize, res: usize) -> Self {
        let symmetrized = spec.kind.is_linearized();
        CellJob {
            spec,
            x,
            k,
            res,
            symmetrized,
            delta: 0.0,
            lambda: 0.0,
            opts: SolveOptions::default(),
        }
    }

    pub fn with_opts(mut self, opts: SolveOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn symmetrized(mut self, on: bool) -> Self {
        self.symmetrized = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.opts.validate()?;
        if self.x.dim() != self.spec.n {
            return Err(Error::DimensionMismatch {
                expected: self.spec.n,
                found: self.x.dim(),
            });
        }
        if !self.x.is_finite() {
            return Err(Error::NonFinite("macroscopic gradient"));
        }
        if self.k < 1 || self.res < 1 {
            return Err(Error::invalid("k and res must be at least 1"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta must be nonnegative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if self.spec.kind.is_linearized() {
            if self.delta != 0.0 {
                return Err(Error::invalid("linearized densities take delta = 0"));
            }
            if !self.symmetrized {
                return Err(Error::invalid("linearized densities need the symmetrized gradient"));
            }
        }
        Ok(())
    }
}

/// Condensed multistart outcome.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveSummary {
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub start_index: usize,
    pub starts: Vec<StartSummary>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellResult {
    /// Minimized average energy `m_k(X)`.
    pub m_value: f64,
    /// Average energy of the zero field.
    pub upper_bound: f64,
    pub solve: SolveSummary,
    /// Seconds spent; left at zero by the core and filled in by callers that
    /// have a clock.
    pub wall_time_s: f64,
    /// Node-major minimizer on the job's grid.
    pub field: Vec<f64>,
}

struct CellObjective<'a, D: ?Sized> {
    grid: &'a Grid,
    density: &'a D,
    x: Mat,
    symmetrized: bool,
}

impl<D: Density + ?Sized> Objective for CellObjective<'_, D> {
    fn len(&self) -> usize {
        self.grid.num_dofs()
    }

    fn value(&self, v: &[f64]) -> f64 {
        self.grid.energy_unchecked(self.density, &self.x, v, self.symmetrized)
    }

    fn value_and_gradient(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        self.grid
            .energy_and_gradient_unchecked(self.density, &self.x, v, self.symmetrized, grad)
    }

    fn num_terms(&self) -> usize {
        self.grid.num_elements()
    }

    fn value_gradient_terms(&self, v: &[f64], grad: &mut [f64], terms: &mut [f64]) -> f64 {
        self.grid
            .energy_gradient_terms(self.density, &self.x, v, self.symmetrized, grad, terms)
    }
}

/// Solves `job` on the calling thread.
pub fn cell_energy(job: &CellJob) -> Result<CellResult> {
    cell_energy_with(job, &[], &Sequential)
}

/// Solves `job` with extra warm starts (node-major fields on the job's grid)
/// appended to the standard multistart set.
pub fn cell_energy_with<E: Executor>(job: &CellJob, warm: &[Vec<f64>], exec: &E) -> Result<CellResult> {
    job.validate()?;
    let grid = Grid::new(job.spec.n, job.k, job.res)?;
    if let Some(w) = warm.iter().find(|w| w.len() != grid.num_dofs()) {
        return Err(Error::DimensionMismatch {
            expected: grid.num_dofs(),
            found: w.len(),
        });
    }
    if job.delta > 0.0 {
        let lin = Linearized {
            inner: &job.spec,
            delta: job.delta,
        };
        let reg = Regularized {
            inner: &lin,
            lambda: job.lambda,
        };
        solve(&grid, &reg, job, warm, exec)
    } else {
        let reg = Regularized {
            inner: &job.spec,
            lambda: job.lambda,
        };
        solve(&grid, &reg, job, warm, exec)
    }
}

fn solve<D: Density + ?Sized, E: Executor>(
    grid: &Grid,
    density: &D,
    job: &CellJob,
    warm: &[Vec<f64>],
    exec: &E,
) -> Result<CellResult> {
    let obj = CellObjective {
        grid,
        density,
        x: job.x,
        symmetrized: job.symmetrized,
    };
    let zero = grid.zero_field();
    let upper_bound = obj.value(zero.values());
    if !upper_bound.is_finite() {
        return Err(Error::NonFinite("cell energy of the zero field"));
    }
    let scale = job.x.norm().max(1.0) * grid.h();
    let r = multistart_with(&obj, grid, &job.opts, scale, warm, exec)?;
    Ok(CellResult {
        m_value: r.value,
        upper_bound,
        solve: SolveSummary {
            iterations: r.iterations,
            converged: r.converged,
            grad_norm: r.grad_norm,
            start_index: r.start_index,
            starts: r.starts,
        },
        wall_time_s: 0.0,
        field: r.field,
    })
}

/// Cell values over an increasing `k` schedule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HomEstimate {
    pub x: Mat,
    /// The `k` values that were solved, in schedule order.
    pub ks: Vec<usize>,
    /// `m_k(X)` for each entry of `ks`.
    pub values: Vec<f64>,
    pub cells: Vec<CellResult>,
    /// Value at the largest solved `k`.
    pub estimate: f64,
    /// `m_{k'} ≤ m_k + 10·g_tol·(1 + |m_k|)` for consecutive entries.
    pub monotone_ok: bool,
    /// Some `k` failed; the failures are listed and the rest of the
    /// schedule was skipped.
    pub partial: bool,
    pub failures: Vec<(usize, String)>,
}

/// Tolerance used by the monotonicity flags.
pub fn monotone_tol(g_tol: f64, m: f64) -> f64 {
    10.0 * g_tol * (1.0 + libm::fabs(m))
}

/// Runs `base` for each `k` in `ks` (strictly increasing). Whenever `k` is a
/// multiple of the previous entry, the periodically tiled previous minimizer
/// joins the starts.
pub fn estimate_schedule<E: Executor>(base: &CellJob, ks: &[usize], exec: &E) -> Result<HomEstimate> {
    estimate_schedule_by(base, ks, |job, warm| cell_energy_with(job, warm, exec))
}

/// [`estimate_schedule`] with a caller-supplied solver, called as
/// `solve(job, warm_starts)` once per `k` in order.
pub fn estimate_schedule_by<S>(base: &CellJob, ks: &[usize], mut solve: S) -> Result<HomEstimate>
where
    S: FnMut(&CellJob, &[Vec<f64>]) -> Result<CellResult>,
{
    if ks.is_empty() {
        return Err(Error::invalid("empty k schedule"));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("k schedule must be strictly increasing"));
    }
    let mut job = base.clone();
    job.k = ks[0];
    job.validate()?;
    let mut out = HomEstimate {
        x: base.x,
        ks: Vec::new(),
        values: Vec::new(),
        cells: Vec::new(),
        estimate: f64::NAN,
        monotone_ok: true,
        partial: false,
        failures: Vec::new(),
    };
    let mut prev: Option<(Grid, Vec<f64>)> = None;
    for &k in ks {
        job.k = k;
        let grid = Grid::new(job.spec.n, k, job.res)?;
        let mut warm = Vec::new();
        if let Some((g, f)) = &prev {
            if k % g.side_length() == 0 {
                warm.push(grid.tile_from(g, f)?.values);
            }
        }
        match solve(&job, &warm) {
            Ok(r) => {
                if let Some(&last) = out.values.last() {
                    if r.m_value > last + monotone_tol(job.opts.g_tol, last) {
                        out.monotone_ok = false;
                    }
                }
                out.ks.push(k);
                out.values.push(r.m_value);
                prev = Some((grid, r.field.clone()));
                out.cells.push(r);
            }
            Err(e) => {
                out.partial = true;
                out.failures.push((k, format!("{e}")));
                break;
            }
        }
    }
    match out.values.last() {
        Some(&v) => {
            out.estimate = v;
            Ok(out)
        }
        None => Err(Error::invalid(format!(
            "every cell failed: {}",
            out.failures.first().map(|f| f.1.as_str()).unwrap_or("")
        ))),
    }
}

/// Base job of [`f_hom_estimate`].
pub fn f_hom_job(spec: &DensitySpec, x: &Mat, res: usize, opts: &SolveOptions) -> CellJob {
    CellJob::new(spec.clone(), *x, 1, res).with_opts(opts.clone())
}

/// Base job of [`v_hom_estimate`].
pub fn v_hom_job(spec: &DensitySpec, x: &Mat, res: usize, opts: &SolveOptions) -> Result<CellJob> {
    if spec.kind.is_nonlinear_elastic() {
        return Err(Error::invalid("V must be a density of the symmetrized gradient"));
    }
    Ok(CellJob::new(spec.clone(), *x, 1, res)
        .symmetrized(true)
        .with_opts(opts.clone()))
}

/// Base job of [`w_hom_delta`]. For multi-well densities the well scale is
/// set to `delta`.
pub fn w_delta_job(spec: &DensitySpec, x: &Mat, delta: f64, res: usize, opts: &SolveOptions) -> Result<CellJob> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta must be positive"));
    }
    if !spec.kind.is_nonlinear_elastic() {
        return Err(Error::invalid("W must be a nonlinear elastic family"));
    }
    let mut spec = spec.clone();
    if spec.kind == DensityKind::MultiWell {
        spec.delta = delta;
    }
    Ok(CellJob::new(spec, *x, 1, res).with_delta(delta).with_opts(opts.clone()))
}

/// Estimate of `f_hom(X)`.
pub fn f_hom_estimate<E: Executor>(
    spec: &DensitySpec,
    x: &Mat,
    ks: &[usize],
    res: usize,
    opts: &SolveOptions,
    exec: &E,
) -> Result<HomEstimate> {
    estimate_schedule(&f_hom_job(spec, x, res, opts), ks, exec)
}

/// Estimate of `V^hom(X)` for a density of the symmetrized gradient.
pub fn v_hom_estimate<E: Executor>(
    spec: &DensitySpec,
    x: &Mat,
    ks: &[usize],
    res: usize,
    opts: &SolveOptions,
    exec: &E,
) -> Result<HomEstimate> {
    estimate_schedule(&v_hom_job(spec, x, res, opts)?, ks, exec)
}

/// Estimate of `δ⁻ᵖ W_δ^hom(I + δX)`.
pub fn w_hom_delta<E: Executor>(
    spec: &DensitySpec,
    x: &Mat,
    delta: f64,
    ks: &[usize],
    res: usize,
    opts: &SolveOptions,
    exec: &E,
) -> Result<HomEstimate> {
    estimate_schedule(&w_delta_job(spec, x, delta, res, opts)?, ks, exec)
}

/// One entry of [`addition_trick`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdditionStep {
    pub lambda: f64,
    pub cell: CellResult,
}

/// Cell values of `f + λ|·|ᵖ` along a strictly decreasing `λ` schedule that
/// ends at 0. Positive `λ` entries are warm-started from the previous
/// minimizer; the final entry is the plain cell problem.
pub fn addition_trick<E: Executor>(
    spec: &DensitySpec,
    x: &Mat,
    lambdas: &[f64],
    k: usize,
    res: usize,
    opts: &SolveOptions,
    exec: &E,
) -> Result<Vec<AdditionStep>> {
    let base = CellJob::new(spec.clone(), *x, k, res).with_opts(opts.clone());
    addition_trick_by(&base, lambdas, |job, warm| cell_energy_with(job, warm, exec))
}

/// [`addition_trick`] on an arbitrary base job with a caller-supplied solver.
pub fn addition_trick_by<S>(base: &CellJob, lambdas: &[f64], mut solve: S) -> Result<Vec<AdditionStep>>
where
    S: FnMut(&CellJob, &[Vec<f64>]) -> Result<CellResult>,
{
    if lambdas.last() != Some(&0.0) {
        return Err(Error::invalid("lambda schedule must end with 0"));
    }
    if lambdas.windows(2).any(|w| !(w[0] > w[1])) || lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("lambda schedule must be strictly decreasing and nonnegative"));
    }
    let mut out: Vec<AdditionStep> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let job = base.clone().with_lambda(lambda);
        let cell = match out.last() {
            Some(prev) if lambda > 0.0 => solve(&job, core::slice::from_ref(&prev.cell.field))?,
            _ => solve(&job, &[])?,
        };
        out.push(AdditionStep { lambda, cell });
    }
    Ok(out)
}

/// Classical 1D homogenized density of `a(x)|X|ᵖ` for phases `aᵢ` with volume
/// fractions `θᵢ`: `(Σ θᵢ aᵢ^{−1/(p−1)})^{−(p−1)} |X|ᵖ`.
pub fn oracle_1d_homog(a: &[f64], theta: &[f64], p: f64, x: f64) -> Result<f64> {
    if a.is_empty() || a.len() != theta.len() {
        return Err(Error::invalid("need matching nonempty phase and fraction lists"));
    }
    if !(p > 1.0) || a.iter().any(|v| !(*v > 0.0)) || theta.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("need p > 1, a > 0, theta >= 0"));
    }
    let total: f64 = theta.iter().sum();
    if libm::fabs(total - 1.0) > 1e-12 {
        return Err(Error::invalid("volume fractions must sum to 1"));
    }
    let s: f64 = a.iter().zip(theta).map(|(ai, ti)| ti * libm::pow(*ai, -1.0 / (p - 1.0))).sum();
    Ok(libm::pow(s, -(p - 1.0)) * libm::pow(libm::fabs(x), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn quick() -> SolveOptions {
        SolveOptions {
            n_starts: 2,
            ..SolveOptions::default()
        }
    }

    #[test]
    fn constant_density_keeps_affine_value() {
        let spec = DensitySpec::constant_p_norm(2, 2.0);
        let job = CellJob::new(spec, Mat::identity(2), 2, 4).with_opts(quick());
        let r = cell_energy(&job).unwrap();
        assert!((r.m_value - 2.0).abs() < 1e-8);
        assert_eq!(r.upper_bound, 2.0);
        assert!(r.m_value <= r.upper_bound + 1e-10);
    }

    #[test]
    fn two_phase_1d_matches_harmonic_mean() {
        let spec = DensitySpec::two_phase_p_norm(1, 2.0, 1.0, 4.0);
        let est = f_hom_estimate(&spec, &Mat::diag(&[1.0]), &[1, 2], 16, &quick(), &Sequential).unwrap();
        let oracle = oracle_1d_homog(&[1.0, 4.0], &[0.5, 0.5], 2.0, 1.0).unwrap();
        assert!((oracle - 1.6).abs() < 1e-15);
        assert!(est.monotone_ok);
        assert!(!est.partial);
        assert!((est.estimate - oracle).abs() / oracle < 0.05, "{}", est.estimate);
    }

    #[test]
    fn oracle_examples() {
        assert!((oracle_1d_homog(&[3.0], &[1.0], 2.5, 2.0).unwrap() - 3.0 * 2f64.powf(2.5)).abs() < 1e-12);
        assert!((oracle_1d_homog(&[1.0, 1.0], &[0.3, 0.7], 3.0, 2.0).unwrap() - 8.0).abs() < 1e-12);
        assert!(oracle_1d_homog(&[1.0, 2.0], &[0.5, 0.6], 2.0, 1.0).is_err());
    }

    #[test]
    fn skew_gradient_costs_nothing_for_symmetric_density() {
        let spec = DensitySpec::linearized_multi_well(2, 2.0, vec![Mat::zeros(2)]);
        let w = Mat::from_row_major(2, &[0.0, 1.0, -1.0, 0.0]).unwrap();
        let est = v_hom_estimate(&spec, &w, &[1], 4, &quick(), &Sequential).unwrap();
        assert!(est.estimate.abs() < 1e-8);
    }

    #[test]
    fn addition_schedule_is_validated() {
        let spec = DensitySpec::constant_p_norm(2, 2.0);
        let x = Mat::identity(2);
        assert!(addition_trick(&spec, &x, &[1.0, 0.5], 1, 2, &quick(), &Sequential).is_err());
        assert!(addition_trick(&spec, &x, &[0.5, 1.0, 0.0], 1, 2, &quick(), &Sequential).is_err());
        let steps = addition_trick(&spec, &x, &[1.0, 0.1, 0.0], 1, 2, &quick(), &Sequential).unwrap();
        let vals: Vec<f64> = steps.iter().map(|s| s.cell.m_value).collect();
        for (v, want) in vals.iter().zip([4.0, 2.2, 2.0]) {
            assert!((v - want).abs() < 1e-8, "{vals:?}");
        }
    }

    #[test]
    fn job_validation() {
        let lin = DensitySpec::linearized_multi_well(2, 2.0, vec![Mat::zeros(2)]);
        let job = CellJob::new(lin, Mat::zeros(2), 1, 2);
        assert!(job.validate().is_ok());
        assert!(job.clone().with_delta(0.1).validate().is_err());
        assert!(job.clone().symmetrized(false).validate().is_err());
        let job = CellJob::new(DensitySpec::single_well(2, 2.0), Mat::zeros(3), 1, 2);
        assert!(matches!(job.validate(), Err(Error::DimensionMismatch { .. })));
    }
}
