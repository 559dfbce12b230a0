//! Experiment harness: cached cell solves on the worker pool and the sweeps
//! behind every CLI command.

use std::time::Instant;

use gammacell_core::cell::{
    addition_trick_by, estimate_schedule_by, monotone_tol, oracle_1d_homog, v_hom_job, w_delta_job, CellJob,
    CellResult, HomEstimate,
};
use gammacell_core::density::{
    dist_so, equivalence_metric, kind_name, DensityKind, DensitySpec, EquivalenceOptions, Linearized,
};
use gammacell_core::envelope::{convexify_1d, laminate, qc_cell};
use gammacell_core::grid::Grid;
use gammacell_core::minimize::SolveOptions;
use gammacell_core::rigidity::{deformation_samples, garding_check, korn_constant, rigidity_ratio, zhang_check};
use gammacell_core::{Executor, Mat};

use crate::cache::{fingerprint, Cache};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::pool::Pool;
use crate::report::{Metadata, Report, Row, VERSION};

/// Name of the check that records compute failures.
pub const COMPUTE_CHECK: &str = "compute";

/// Absolute floor added to relative-slack monotonicity checks.
const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Cell,
    Homog,
    Envelope,
    Korn,
    Rigidity,
    Commute,
    Equiv,
    Diagonal,
    Addition,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Homog => "homog",
            Command::Envelope => "envelope",
            Command::Korn => "korn",
            Command::Rigidity => "rigidity",
            Command::Commute => "commute",
            Command::Equiv => "equiv",
            Command::Diagonal => "diagonal",
            Command::Addition => "addition",
        }
    }

    /// Row kind plotted by `--plot`.
    pub fn plot_kind(self) -> &'static str {
        match self {
            Command::Cell => "cell_energy",
            Command::Homog => "m_k",
            Command::Envelope => "qc_bound",
            Command::Korn => "korn_constant",
            Command::Rigidity => "zhang_margin",
            Command::Commute | Command::Diagonal => "rel_err",
            Command::Equiv => "equivalence_metric",
            Command::Addition => "addition_trick",
        }
    }

    /// Whether the plot uses log axes.
    pub fn plot_log(self) -> bool {
        matches!(self, Command::Commute | Command::Equiv)
    }
}

/// Runs cell jobs through the optional cache on a shared worker pool.
pub struct Runner {
    pool: Pool,
    cache: Option<Cache>,
}

impl Runner {
    pub fn new(pool: Pool, cache: Option<Cache>) -> Self {
        Runner { pool, cache }
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    /// Solves `job` with extra warm starts. Cache hits return the stored
    /// result, including its original wall time.
    pub fn solve(&self, job: &CellJob, warm: &[Vec<f64>]) -> gammacell_core::Result<CellResult> {
        let compute = || {
            let t = Instant::now();
            let mut r = gammacell_core::cell::cell_energy_with(job, warm, &self.pool)?;
            r.wall_time_s = t.elapsed().as_secs_f64();
            Ok(r)
        };
        match &self.cache {
            None => compute(),
            Some(c) => {
                let key = fingerprint(job, warm);
                c.get_or_compute(&key, job, compute, |e| eprintln!("warning: cache: {e}"))
                    .map(|(r, _)| r)
            }
        }
    }
}

/// Metadata for a report of `command` under `cfg`.
pub fn metadata(cfg: &Config, command: &str) -> Metadata {
    Metadata {
        config_hash: cfg.hash(),
        version: VERSION.into(),
        seed: cfg.seed,
        command: command.into(),
    }
}

/// The solver options used by every job: `[solve]` with the global seed.
pub fn solve_options(cfg: &Config) -> SolveOptions {
    SolveOptions {
        seed: cfg.seed,
        ..cfg.solve.clone()
    }
}

fn flat(x: &Mat) -> Vec<f64> {
    x.to_row_major()
}

fn fmt_x(x: &Mat) -> String {
    let v: Vec<String> = flat(x).iter().map(|e| format!("{e}")).collect();
    format!("[{}]", v.join(","))
}

fn rel_err(w: f64, v: f64) -> f64 {
    (w - v).abs() / (v.abs() + 1e-12)
}

fn cell_row(experiment: &str, kind: &str, job: &CellJob, r: &CellResult) -> Row {
    Row {
        experiment: experiment.into(),
        x: flat(&job.x),
        delta: job.delta,
        k: job.k,
        res: job.res,
        kind: kind.into(),
        value: r.m_value,
        converged: r.solve.converged,
        wall_time_s: r.wall_time_s,
        seed: job.opts.seed,
    }
}

fn failed_row(experiment: &str, kind: &str, job: &CellJob) -> Row {
    Row {
        experiment: experiment.into(),
        x: flat(&job.x),
        delta: job.delta,
        k: job.k,
        res: job.res,
        kind: kind.into(),
        value: f64::NAN,
        converged: false,
        wall_time_s: f64::NAN,
        seed: job.opts.seed,
    }
}

/// Collects compute failures while rows are emitted.
#[derive(Default)]
struct Failures(Vec<String>);

impl Failures {
    fn add(&mut self, what: impl std::fmt::Display, e: impl std::fmt::Display) {
        self.0.push(format!("{what}: {e}"));
    }

    fn finish(self, report: &mut Report) {
        let detail = if self.0.is_empty() {
            "no failures".to_string()
        } else {
            self.0.join("; ")
        };
        report.check(COMPUTE_CHECK, self.0.is_empty(), detail);
    }
}

/// Emits one row per scheduled `k`; unsolved entries become NaN rows.
fn schedule_rows(
    report: &mut Report,
    fails: &mut Failures,
    experiment: &str,
    kind: &str,
    base: &CellJob,
    ks: &[usize],
    est: &gammacell_core::Result<HomEstimate>,
) {
    for &k in ks {
        let mut job = base.clone();
        job.k = k;
        let solved = est
            .as_ref()
            .ok()
            .and_then(|e| e.ks.iter().position(|&kk| kk == k).map(|i| &e.cells[i]));
        match solved {
            Some(r) => report.push(cell_row(experiment, kind, &job, r)),
            None => report.push(failed_row(experiment, kind, &job)),
        }
    }
    match est {
        Ok(e) => {
            for (k, msg) in &e.failures {
                fails.add(format!("{experiment} {kind} X={} k={k}", fmt_x(&base.x)), msg);
            }
        }
        Err(e) => fails.add(format!("{experiment} {kind} X={}", fmt_x(&base.x)), e),
    }
}

/// Full estimate at the last scheduled `k`, if every `k` was solved.
fn full_estimate(est: &gammacell_core::Result<HomEstimate>, ks: &[usize]) -> f64 {
    match est {
        Ok(e) if e.ks.len() == ks.len() => e.estimate,
        _ => f64::NAN,
    }
}

fn upper_bound_ok(est: &gammacell_core::Result<HomEstimate>) -> bool {
    est.as_ref()
        .map(|e| e.cells.iter().all(|c| c.m_value <= c.upper_bound + 1e-10))
        .unwrap_or(true)
}

/// `later ≤ earlier·(1 + slack) + floor` along the sequence.
pub fn nonincreasing_within(values: &[f64], slack: f64, floor: f64) -> bool {
    values.windows(2).all(|w| !(w[1] > w[0] * (1.0 + slack) + floor))
}

/// Least-squares slope of `log y` against `log x` over positive pairs.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx) * (p.0 - mx)));
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

fn need(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(msg))
    }
}

fn checked(job: CellJob) -> Result<CellJob> {
    job.validate().map_err(|e| Error::config(e.to_string()))?;
    Ok(job)
}

fn base_job(cfg: &Config, x: &Mat, k: usize) -> Result<CellJob> {
    checked(
        CellJob::new(cfg.density.clone(), *x, k, cfg.cell.res)
            .symmetrized(cfg.symmetrized())
            .with_delta(cfg.cell.delta)
            .with_opts(solve_options(cfg)),
    )
}

fn linearized(cfg: &Config) -> Result<&DensitySpec> {
    need(cfg.density.kind.is_nonlinear_elastic(), "[density] must be a nonlinear elastic family W")?;
    let v = cfg
        .linearized
        .as_ref()
        .ok_or_else(|| Error::config("this command needs a [linearized] density V"))?;
    need(!v.kind.is_nonlinear_elastic(), "[linearized] must act on symmetrized gradients")?;
    Ok(v)
}

fn v_job(cfg: &Config, v: &DensitySpec, x: &Mat) -> Result<CellJob> {
    checked(v_hom_job(v, x, cfg.cell.res, &solve_options(cfg)).map_err(|e| Error::config(e.to_string()))?)
}

fn w_job(cfg: &Config, x: &Mat, delta: f64) -> Result<CellJob> {
    checked(
        w_delta_job(&cfg.density, x, delta, cfg.cell.res, &solve_options(cfg))
            .map_err(|e| Error::config(e.to_string()))?,
    )
}

fn describe(job: &CellJob, ks: &[usize]) -> String {
    format!(
        "{} X={} k={:?} res={} delta={} lambda={} symmetrized={} n_starts={} seed={}",
        kind_name(job.spec.kind),
        fmt_x(&job.x),
        ks,
        job.res,
        job.delta,
        job.lambda,
        job.symmetrized,
        job.opts.n_starts,
        job.opts.seed
    )
}

fn lambdas(cfg: &Config) -> Vec<f64> {
    if cfg.sweep.lambda.is_empty() {
        vec![1.0, 0.3, 0.1, 0.03, 0.0]
    } else {
        cfg.sweep.lambda.clone()
    }
}

fn zhang_points(cfg: &Config) -> Vec<Mat> {
    if !cfg.cell.x.is_empty() {
        return cfg.cell.x.clone();
    }
    let n = cfg.density.n;
    let id = Mat::identity(n);
    match n {
        2 => vec![
            id,
            Mat::rotation2(0.7),
            Mat::diag(&[1.2, 0.9]),
            Mat::diag(&[0.5, 0.5]),
            (id + Mat::rotation2(0.6)).scale(0.5),
        ],
        3 => vec![
            id,
            Mat::rotation3([0.0, 0.0, 1.0], 0.7),
            Mat::diag(&[1.2, 0.9, 1.0]),
            Mat::diag(&[0.5, 0.5, 0.5]),
        ],
        _ => vec![id, Mat::diag(&[0.5]), Mat::diag(&[1.5])],
    }
}

/// Volume fractions and coefficients of a 1D phase map, or `None` when
/// intervals overlap.
fn phases_1d(spec: &DensitySpec) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut iv: Vec<(f64, f64, f64)> = spec
        .phases
        .iter()
        .map(|p| (p.bounds[0].clamp(0.0, 1.0), p.bounds[1].clamp(0.0, 1.0), p.a))
        .filter(|p| p.1 > p.0)
        .collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    if iv.windows(2).any(|w| w[1].0 < w[0].1) {
        return None;
    }
    let covered: f64 = iv.iter().map(|p| p.1 - p.0).sum();
    let mut a: Vec<f64> = iv.iter().map(|p| p.2).collect();
    let mut theta: Vec<f64> = iv.iter().map(|p| p.1 - p.0).collect();
    if covered < 1.0 {
        a.push(spec.background);
        theta.push(1.0 - covered);
    }
    // Fractions are renormalized against rounding in the box edges.
    let total: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|t| *t /= total);
    Some((a, theta))
}

/// Validates the command-specific parts of `cfg` and lists the resolved jobs.
pub fn plan(cmd: Command, cfg: &Config) -> Result<Vec<String>> {
    let xs = &cfg.cell.x;
    let ks = &cfg.cell.k;
    let mut out = Vec::new();
    match cmd {
        Command::Cell => {
            need(!xs.is_empty(), "cell needs at least one entry in cell.X")?;
            for x in xs {
                for &k in ks {
                    out.push(format!("cell {}", describe(&base_job(cfg, x, k)?, &[k])));
                }
            }
        }
        Command::Homog => {
            need(!xs.is_empty(), "homog needs at least one entry in cell.X")?;
            for x in xs {
                out.push(format!("homog {}", describe(&base_job(cfg, x, ks[0])?, ks)));
            }
        }
        Command::Commute => {
            let v = linearized(cfg)?;
            need(!xs.is_empty(), "commute needs cell.X")?;
            need(!cfg.sweep.delta.is_empty(), "commute needs sweep.delta")?;
            for x in xs {
                out.push(format!("commute v_hom {}", describe(&v_job(cfg, v, x)?, ks)));
                for &d in &cfg.sweep.delta {
                    out.push(format!("commute w_hom_delta {}", describe(&w_job(cfg, x, d)?, ks)));
                }
            }
        }
        Command::Equiv => {
            linearized(cfg)?;
            need(!cfg.sweep.delta.is_empty(), "equiv needs sweep.delta")?;
            for &d in &cfg.sweep.delta {
                for &t in &cfg.sweep.t {
                    out.push(format!(
                        "equiv delta={d} T={t} R={} nx={} n_mat={} sym_only={}",
                        cfg.sweep.r, cfg.sweep.nx, cfg.sweep.n_mat, cfg.sweep.sym_only
                    ));
                }
            }
        }
        Command::Diagonal => {
            let v = linearized(cfg)?;
            need(!xs.is_empty(), "diagonal needs cell.X")?;
            let sched = &cfg.sweep.diagonal;
            need(!sched.is_empty(), "diagonal needs sweep.diagonal")?;
            need(
                sched.windows(2).all(|w| w[0].k <= w[1].k && w[0].delta >= w[1].delta),
                "sweep.diagonal needs nondecreasing k and nonincreasing delta",
            )?;
            let ref_ks = diagonal_ks(cfg);
            for x in xs {
                for p in sched {
                    let mut job = w_job(cfg, x, p.delta)?;
                    job.k = p.k;
                    out.push(format!("diagonal w_hom_delta {}", describe(&job, &[p.k])));
                }
                out.push(format!("diagonal v_hom {}", describe(&v_job(cfg, v, x)?, &ref_ks)));
            }
        }
        Command::Addition => {
            need(!xs.is_empty(), "addition needs cell.X")?;
            let ls = lambdas(cfg);
            need(
                ls.last() == Some(&0.0) && ls.windows(2).all(|w| w[0] > w[1]) && ls.iter().all(|l| *l >= 0.0),
                "sweep.lambda must be strictly decreasing, nonnegative and end with 0",
            )?;
            let k = *ks.last().unwrap();
            for x in xs {
                for &l in &ls {
                    out.push(format!("addition {}", describe(&base_job(cfg, x, k)?.with_lambda(l), &[k])));
                }
            }
        }
        Command::Envelope => {
            need(!xs.is_empty(), "envelope needs cell.X")?;
            need(cfg.density.is_x_independent(), "envelopes need an x-independent density")?;
            for x in xs {
                let job = checked(
                    CellJob::new(cfg.density.clone(), *x, 1, cfg.envelope.res).with_opts(solve_options(cfg)),
                )?;
                out.push(format!("envelope qc_cell {}", describe(&job, &[1])));
                if let Some(l) = &cfg.envelope.laminate {
                    out.push(format!(
                        "envelope laminate X={} depth={} spacing={} half_width={}",
                        fmt_x(x),
                        l.depth,
                        l.spacing,
                        l.half_width
                    ));
                }
            }
            if cfg.density.n == 1 {
                out.push(format!(
                    "envelope convex_1d range={:?} step={}",
                    cfg.envelope.range, cfg.envelope.step
                ));
            }
        }
        Command::Korn => {
            need(!cfg.rigidity.res.is_empty(), "korn needs rigidity.res")?;
            for &res in &cfg.rigidity.res {
                out.push(format!(
                    "korn n={} res={res} p={} n_starts={}",
                    cfg.density.n, cfg.rigidity.p, cfg.solve.n_starts
                ));
            }
        }
        Command::Rigidity => {
            need(!cfg.rigidity.res.is_empty(), "rigidity needs rigidity.res")?;
            out.push(format!(
                "rigidity ratio n={} res={} samples={} p={}",
                cfg.density.n,
                cfg.rigidity.res[0],
                4 * cfg.rigidity.n_fields + 1,
                cfg.rigidity.p
            ));
            if cfg.density.kind == DensityKind::SingleWell {
                for x in zhang_points(cfg) {
                    out.push(format!("rigidity zhang X={} res={}", fmt_x(&x), cfg.cell.res));
                }
            }
            if let (Some(a), Some(g)) = (cfg.rigidity.alpha, cfg.rigidity.gamma) {
                out.push(format!(
                    "rigidity garding alpha={a} gamma={g} n_fields={}",
                    cfg.rigidity.n_fields
                ));
            }
        }
    }
    Ok(out)
}

fn diagonal_ks(cfg: &Config) -> Vec<usize> {
    let mut ks: Vec<usize> = cfg.sweep.diagonal.iter().map(|p| p.k).collect();
    ks.dedup();
    ks
}

/// Validates, then runs `cmd`.
pub fn run(cmd: Command, cfg: &Config, runner: &Runner) -> Result<Report> {
    plan(cmd, cfg)?;
    let mut report = Report::new(metadata(cfg, cmd.name()));
    match cmd {
        Command::Cell => run_cell(cfg, runner, &mut report)?,
        Command::Homog => run_homog(cfg, runner, &mut report)?,
        Command::Commute => run_commutability(cfg, runner, &mut report)?,
        Command::Equiv => run_equivalence_profile(cfg, runner, &mut report)?,
        Command::Diagonal => run_diagonal(cfg, runner, &mut report)?,
        Command::Addition => run_addition(cfg, runner, &mut report)?,
        Command::Envelope => run_envelope(cfg, runner, &mut report)?,
        Command::Korn => run_korn(cfg, runner, &mut report)?,
        Command::Rigidity => run_rigidity(cfg, runner, &mut report)?,
    }
    Ok(report)
}

fn run_cell(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let mut jobs = Vec::new();
    for x in &cfg.cell.x {
        for &k in &cfg.cell.k {
            jobs.push(base_job(cfg, x, k)?);
        }
    }
    let results = runner.pool().map(jobs.len(), |i| runner.solve(&jobs[i], &[]));
    let mut fails = Failures::default();
    let mut upper = true;
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(r) => {
                upper &= r.m_value <= r.upper_bound + 1e-10;
                report.push(cell_row("cell", "cell_energy", job, &r));
            }
            Err(e) => {
                fails.add(format!("cell X={} k={}", fmt_x(&job.x), job.k), e);
                report.push(failed_row("cell", "cell_energy", job));
            }
        }
    }
    report.check("upper_bound", upper, "m_value <= zero-field average + 1e-10");
    fails.finish(report);
    Ok(())
}

fn run_homog(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let ks = &cfg.cell.k;
    let bases: Vec<CellJob> = cfg
        .cell
        .x
        .iter()
        .map(|x| base_job(cfg, x, ks[0]))
        .collect::<Result<_>>()?;
    let ests = runner.pool().map(bases.len(), |i| {
        estimate_schedule_by(&bases[i], ks, |j, w| runner.solve(j, w))
    });
    let oracle_phases = match cfg.density.kind {
        DensityKind::ConstantPNorm | DensityKind::TwoPhasePNorm
            if cfg.density.n == 1 && cfg.cell.delta == 0.0 =>
        {
            phases_1d(&cfg.density)
        }
        _ => None,
    };
    let mut fails = Failures::default();
    let (mut mono, mut upper, mut oracle_ok) = (true, true, true);
    let mut oracle_detail = Vec::new();
    for (base, est) in bases.iter().zip(&ests) {
        schedule_rows(report, &mut fails, "homog", "m_k", base, ks, est);
        mono &= est.as_ref().map(|e| e.monotone_ok).unwrap_or(true);
        upper &= upper_bound_ok(est);
        let estimate = full_estimate(est, ks);
        let mut row = Row::new("homog", "hom_estimate", estimate);
        row.x = flat(&base.x);
        row.k = *ks.last().unwrap();
        row.res = base.res;
        row.delta = base.delta;
        row.seed = base.opts.seed;
        row.converged = est
            .as_ref()
            .map(|e| e.cells.last().is_some_and(|c| c.solve.converged))
            .unwrap_or(false);
        report.push(row);
        if let Some((a, theta)) = &oracle_phases {
            let o = oracle_1d_homog(a, theta, cfg.density.p, base.x[(0, 0)])?;
            let mut row = Row::new("homog", "oracle_1d", o);
            row.x = flat(&base.x);
            row.seed = base.opts.seed;
            report.push(row);
            let e = rel_err(estimate, o);
            oracle_ok &= e <= cfg.sweep.tol;
            oracle_detail.push(format!("X={} rel_err={e:.3e}", fmt_x(&base.x)));
        }
    }
    report.check("monotone_in_k", mono, "m_k' <= m_k + 10 g_tol (1 + |m_k|)");
    report.check("upper_bound", upper, "m_value <= zero-field average + 1e-10");
    if oracle_phases.is_some() {
        report.check(
            "oracle_1d",
            oracle_ok,
            format!("tol={}: {}", cfg.sweep.tol, oracle_detail.join(", ")),
        );
    }
    fails.finish(report);
    Ok(())
}

/// Commutability sweep: `V^hom(X)` against `δ⁻ᵖ W_δ^hom(I + δX)` along the δ
/// schedule, with `rel_err(δ)` from the largest `k` of each.
pub fn run_commutability(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let v = linearized(cfg)?;
    let ks = &cfg.cell.k;
    let deltas = &cfg.sweep.delta;
    let mut jobs = Vec::new();
    for x in &cfg.cell.x {
        jobs.push(v_job(cfg, v, x)?);
        for &d in deltas {
            jobs.push(w_job(cfg, x, d)?);
        }
    }
    let ests = runner.pool().map(jobs.len(), |i| {
        estimate_schedule_by(&jobs[i], ks, |j, w| runner.solve(j, w))
    });
    let mut fails = Failures::default();
    let (mut mono, mut upper, mut final_ok) = (true, true, true);
    let tiling = ests.iter().all(|e| e.as_ref().map(|e| e.monotone_ok).unwrap_or(true));
    let mut details = Vec::new();
    let stride = 1 + deltas.len();
    for (xi, x) in cfg.cell.x.iter().enumerate() {
        let v_est = &ests[xi * stride];
        schedule_rows(report, &mut fails, "commute", "v_hom", &jobs[xi * stride], ks, v_est);
        upper &= upper_bound_ok(v_est);
        let v_val = full_estimate(v_est, ks);
        let mut pairs = Vec::new();
        for (di, &d) in deltas.iter().enumerate() {
            let j = xi * stride + 1 + di;
            schedule_rows(report, &mut fails, "commute", "w_hom_delta", &jobs[j], ks, &ests[j]);
            upper &= upper_bound_ok(&ests[j]);
            let e = rel_err(full_estimate(&ests[j], ks), v_val);
            let mut row = Row::new("commute", "rel_err", e);
            row.x = flat(x);
            row.delta = d;
            row.k = *ks.last().unwrap();
            row.res = cfg.cell.res;
            row.seed = jobs[j].opts.seed;
            row.converged = e.is_finite();
            report.push(row);
            pairs.push((d, e));
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let errs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let m = nonincreasing_within(&errs, cfg.sweep.slack, REL_FLOOR) && errs.iter().all(|e| e.is_finite());
        mono &= m;
        let last = errs.last().copied().unwrap_or(f64::NAN);
        final_ok &= last <= cfg.sweep.tol;
        details.push(format!("X={} rel_err={:?}", fmt_x(x), errs));
    }
    report.check(
        "rel_err_monotone",
        mono,
        format!("slack={}: {}", cfg.sweep.slack, details.join(", ")),
    );
    report.check("rel_err_final", final_ok, format!("rel_err at smallest delta <= {}", cfg.sweep.tol));
    report.check("monotone_in_k", tiling, "m_k' <= m_k + 10 g_tol (1 + |m_k|)");
    report.check("upper_bound", upper, "m_value <= zero-field average + 1e-10");
    fails.finish(report);
    Ok(())
}

/// Equivalence profile of `δ⁻ᵖ W_δ(x, I + δ·)` against `V` over the δ and T
/// schedules, with the T-maximum and its log–log slope in δ.
pub fn run_equivalence_profile(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let v = linearized(cfg)?;
    let s = &cfg.sweep;
    let cases: Vec<(f64, f64)> = s.delta.iter().flat_map(|&d| s.t.iter().map(move |&t| (d, t))).collect();
    let values = runner.pool().map(cases.len(), |i| {
        let (d, t) = cases[i];
        let mut w = cfg.density.clone();
        if w.kind == DensityKind::MultiWell {
            w.delta = d;
        }
        let lin = Linearized { inner: &w, delta: d };
        let opts = EquivalenceOptions {
            radius: s.r,
            half_width: t,
            nx: s.nx,
            n_mat: s.n_mat,
            sym_only: s.sym_only,
        };
        let t0 = Instant::now();
        equivalence_metric(&lin, v, &opts).map(|m| (m, t0.elapsed().as_secs_f64()))
    });
    let mut fails = Failures::default();
    let mut tmax: Vec<(f64, f64)> = Vec::new();
    for ((d, t), r) in cases.iter().zip(values) {
        let (value, wall) = match r {
            Ok(p) => p,
            Err(e) => {
                fails.add(format!("equiv delta={d} T={t}"), e);
                (f64::NAN, f64::NAN)
            }
        };
        let mut row = Row::new(format!("equiv:T={t}"), "equivalence_metric", value);
        row.delta = *d;
        row.wall_time_s = wall;
        row.seed = cfg.seed;
        row.converged = value.is_finite();
        report.push(row);
        match tmax.iter_mut().find(|p| p.0 == *d) {
            Some(p) => p.1 = if value.is_nan() { value } else { p.1.max(value) },
            None => tmax.push((*d, value)),
        }
    }
    tmax.sort_by(|a, b| b.0.total_cmp(&a.0));
    for &(d, m) in &tmax {
        let mut row = Row::new("equiv:Tmax", "equivalence_metric", m);
        row.delta = d;
        row.seed = cfg.seed;
        row.converged = m.is_finite();
        report.push(row);
    }
    let ds: Vec<f64> = tmax.iter().map(|p| p.0).collect();
    let ms: Vec<f64> = tmax.iter().map(|p| p.1).collect();
    let slope = loglog_slope(&ds, &ms);
    let mut row = Row::new("equiv:Tmax", "equivalence_slope", slope);
    row.seed = cfg.seed;
    row.converged = slope.is_finite();
    report.push(row);
    report.check(
        "metric_monotone",
        nonincreasing_within(&ms, s.slack, 0.0),
        format!("T-max metric along decreasing delta: {ms:?}"),
    );
    report.check(
        "metric_slope",
        slope >= 0.9,
        format!("log-log slope in delta {slope:.4}; max metric {:.3e}", ms.iter().copied().fold(0.0, f64::max)),
    );
    fails.finish(report);
    Ok(())
}

enum DiagonalOut {
    W(Vec<(CellJob, gammacell_core::Result<CellResult>)>),
    V(gammacell_core::Result<HomEstimate>),
}

/// Diagonal sequence `(k_j, δ_j)` against the `V^hom` reference at the
/// largest `k`.
pub fn run_diagonal(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let v = linearized(cfg)?;
    let sched = &cfg.sweep.diagonal;
    let ref_ks = diagonal_ks(cfg);
    let xs = &cfg.cell.x;
    let v_jobs: Vec<CellJob> = xs.iter().map(|x| v_job(cfg, v, x)).collect::<Result<_>>()?;
    let w_jobs: Vec<Vec<CellJob>> = xs
        .iter()
        .map(|x| {
            sched
                .iter()
                .map(|p| {
                    let mut j = w_job(cfg, x, p.delta)?;
                    j.k = p.k;
                    Ok(j)
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let outs = runner.pool().map(2 * xs.len(), |i| {
        let xi = i / 2;
        if i % 2 == 1 {
            return DiagonalOut::V(estimate_schedule_by(&v_jobs[xi], &ref_ks, |j, w| runner.solve(j, w)));
        }
        let mut done: Vec<(CellJob, gammacell_core::Result<CellResult>)> = Vec::new();
        let mut prev: Option<(usize, Vec<f64>)> = None;
        for job in &w_jobs[xi] {
            let mut warm = Vec::new();
            if let Some((k0, f)) = &prev {
                if job.k % k0 == 0 {
                    let tiled = Grid::new(job.spec.n, *k0, job.res)
                        .and_then(|small| Grid::new(job.spec.n, job.k, job.res)?.tile_from(&small, f));
                    if let Ok(t) = tiled {
                        warm.push(t.values);
                    }
                }
            }
            let r = runner.solve(job, &warm);
            if let Ok(r) = &r {
                prev = Some((job.k, r.field.clone()));
            }
            done.push((job.clone(), r));
        }
        DiagonalOut::W(done)
    });
    let mut fails = Failures::default();
    let (mut ok, mut upper, mut tiling) = (true, true, true);
    let mut details = Vec::new();
    let mut outs = outs.into_iter();
    for (xi, x) in xs.iter().enumerate() {
        let (Some(DiagonalOut::W(ws)), Some(DiagonalOut::V(v_est))) = (outs.next(), outs.next()) else {
            unreachable!("tasks alternate W and V");
        };
        let mut last = f64::NAN;
        for (job, r) in &ws {
            match r {
                Ok(r) => {
                    upper &= r.m_value <= r.upper_bound + 1e-10;
                    report.push(cell_row("diagonal", "w_hom_delta", job, r));
                }
                Err(e) => {
                    fails.add(format!("diagonal X={} k={} delta={}", fmt_x(x), job.k, job.delta), e);
                    report.push(failed_row("diagonal", "w_hom_delta", job));
                }
            }
        }
        if let Some((_, Ok(r))) = ws.last() {
            last = r.m_value;
        }
        schedule_rows(report, &mut fails, "diagonal:reference", "v_hom", &v_jobs[xi], &ref_ks, &v_est);
        upper &= upper_bound_ok(&v_est);
        tiling &= v_est.as_ref().map(|e| e.monotone_ok).unwrap_or(true);
        let reference = full_estimate(&v_est, &ref_ks);
        let e = rel_err(last, reference);
        let lastp = sched.last().unwrap();
        let mut row = Row::new("diagonal", "rel_err", e);
        row.x = flat(x);
        row.k = lastp.k;
        row.delta = lastp.delta;
        row.res = cfg.cell.res;
        row.seed = cfg.seed;
        row.converged = e.is_finite();
        report.push(row);
        ok &= e <= cfg.sweep.tol;
        details.push(format!("X={} rel_err={e:.3e}", fmt_x(x)));
    }
    report.check(
        "diagonal_converges",
        ok,
        format!("final rel_err <= {}: {}", cfg.sweep.tol, details.join(", ")),
    );
    report.check("monotone_in_k", tiling, "m_k' <= m_k + 10 g_tol (1 + |m_k|) on the reference");
    report.check("upper_bound", upper, "m_value <= zero-field average + 1e-10");
    fails.finish(report);
    Ok(())
}

/// Regularized cell values `m^λ` along the λ schedule at the largest `k`.
pub fn run_addition(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let ls = lambdas(cfg);
    let k = *cfg.cell.k.last().unwrap();
    let bases: Vec<CellJob> = cfg.cell.x.iter().map(|x| base_job(cfg, x, k)).collect::<Result<_>>()?;
    let outs = runner.pool().map(bases.len(), |i| {
        let steps = addition_trick_by(&bases[i], &ls, |j, w| runner.solve(j, w));
        let plain = runner.solve(&bases[i], &[]);
        (steps, plain)
    });
    let mut fails = Failures::default();
    let (mut mono, mut exact, mut upper) = (true, true, true);
    for (base, (steps, plain)) in bases.iter().zip(outs) {
        match steps {
            Ok(steps) => {
                for s in &steps {
                    let job = base.clone().with_lambda(s.lambda);
                    report.push(cell_row(&format!("addition:lambda={}", s.lambda), "addition_trick", &job, &s.cell));
                }
                let vals: Vec<f64> = steps.iter().map(|s| s.cell.m_value).collect();
                mono &= vals
                    .windows(2)
                    .all(|w| w[1] <= w[0] + monotone_tol(base.opts.g_tol, w[0]));
                if let Ok(p) = &plain {
                    exact &= vals.last().map(|v| v.to_bits()) == Some(p.m_value.to_bits());
                }
            }
            Err(e) => {
                fails.add(format!("addition X={}", fmt_x(&base.x)), e);
                for &l in &ls {
                    report.push(failed_row(&format!("addition:lambda={l}"), "addition_trick", &base.clone().with_lambda(l)));
                }
            }
        }
        match plain {
            Ok(p) => {
                upper &= p.m_value <= p.upper_bound + 1e-10;
                report.push(cell_row("addition:plain", "cell_energy", base, &p));
            }
            Err(e) => {
                fails.add(format!("addition plain X={}", fmt_x(&base.x)), e);
                report.push(failed_row("addition:plain", "cell_energy", base));
            }
        }
    }
    report.check("lambda_monotone", mono, "m^lambda nonincreasing as lambda decreases");
    report.check("lambda_zero_exact", exact, "m^0 equals the plain cell value bit for bit");
    report.check("upper_bound", upper, "m_value <= zero-field average + 1e-10");
    fails.finish(report);
    Ok(())
}

/// Envelope bounds at each X: the unit-cube cell value, optional laminate
/// bounds and, in 1D, the sampled convex hull.
pub fn run_envelope(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let spec = &cfg.density;
    let opts = solve_options(cfg);
    let res = cfg.envelope.res;
    let xs = &cfg.cell.x;
    let mut fails = Failures::default();
    let qcs = runner.pool().map(xs.len(), |i| {
        let t = Instant::now();
        qc_cell(spec, &xs[i], res, &opts, runner.pool()).map(|r| (r, t.elapsed().as_secs_f64()))
    });
    let mut qc_vals = Vec::new();
    let mut upper = true;
    for (x, r) in xs.iter().zip(qcs) {
        let mut row = Row::new("envelope:qc_cell", "qc_bound", f64::NAN);
        row.x = flat(x);
        row.k = 1;
        row.res = res;
        row.seed = opts.seed;
        match r {
            Ok((r, wall)) => {
                upper &= r.value <= spec.eval(&vec![0.0; spec.n], x)? + 1e-10;
                row.value = r.value;
                row.converged = r.converged;
                row.wall_time_s = wall;
            }
            Err(e) => {
                fails.add(format!("qc_cell X={}", fmt_x(x)), e);
                row.converged = false;
                row.wall_time_s = f64::NAN;
            }
        }
        qc_vals.push(row.value);
        report.push(row);
    }
    if let Some(lopts) = &cfg.envelope.laminate {
        for x in xs {
            let t = Instant::now();
            let mut row = Row::new("envelope:laminate", "laminate_bound", f64::NAN);
            row.x = flat(x);
            row.seed = opts.seed;
            row.k = lopts.depth;
            match laminate(spec, x, lopts, runner.pool()) {
                Ok(r) => {
                    row.value = r.value;
                    row.wall_time_s = t.elapsed().as_secs_f64();
                }
                Err(e) => {
                    fails.add(format!("laminate X={}", fmt_x(x)), e);
                    row.converged = false;
                    row.wall_time_s = f64::NAN;
                }
            }
            report.push(row);
        }
    }
    if spec.n == 1 {
        let [lo, hi] = cfg.envelope.range;
        let count = ((hi - lo) / cfg.envelope.step).round() as usize;
        let sx: Vec<f64> = (0..=count).map(|i| lo + i as f64 * cfg.envelope.step).collect();
        let sy: Vec<f64> = sx
            .iter()
            .map(|&v| spec.eval(&[0.0], &Mat::diag(&[v])))
            .collect::<gammacell_core::Result<_>>()?;
        let hull = convexify_1d(&sx, &sy)?;
        let mut gap: f64 = 0.0;
        for (x, qc) in xs.iter().zip(&qc_vals) {
            let h = hull.eval(x[(0, 0)]).unwrap_or(f64::NAN);
            let mut row = Row::new("envelope:convex_1d", "convex_1d", h);
            row.x = flat(x);
            row.seed = opts.seed;
            row.converged = h.is_finite();
            report.push(row);
            gap = gap.max((qc - h).abs());
        }
        let mut row = Row::new("envelope:convex_1d", "qc_hull_gap", gap);
        row.res = res;
        row.seed = opts.seed;
        report.push(row);
        report.check("qc_hull_gap", gap <= cfg.sweep.tol, format!("sup |qc - hull| = {gap:.3e} <= {}", cfg.sweep.tol));
    }
    report.check("upper_bound", upper, "qc value <= f(X) + 1e-10");
    fails.finish(report);
    Ok(())
}

/// Korn constant on the unit cube across `rigidity.res`.
pub fn run_korn(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let opts = solve_options(cfg);
    let n = cfg.density.n;
    let mut fails = Failures::default();
    let mut values = Vec::new();
    for &res in &cfg.rigidity.res {
        let t = Instant::now();
        let mut row = Row::new("korn", "korn_constant", f64::NAN);
        row.k = 1;
        row.res = res;
        row.seed = opts.seed;
        let r = Grid::new(n, 1, res).and_then(|g| korn_constant(&g, cfg.rigidity.p, &opts, runner.pool()));
        match r {
            Ok(c) => {
                row.value = c.value;
                row.wall_time_s = t.elapsed().as_secs_f64();
            }
            Err(e) => {
                fails.add(format!("korn res={res}"), e);
                row.converged = false;
                row.wall_time_s = f64::NAN;
            }
        }
        values.push(row.value);
        report.push(row);
    }
    let worst = values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[0].abs())
        .fold(0.0, f64::max);
    report.check(
        "korn_refinement",
        worst <= 0.15,
        format!("largest relative change between resolutions {worst:.4} (values are lower bounds)"),
    );
    fails.finish(report);
    Ok(())
}

/// Rigidity ratio from random deformations, the Zhang-type check for the
/// single-well density and, when configured, the Gårding check.
pub fn run_rigidity(cfg: &Config, runner: &Runner, report: &mut Report) -> Result<()> {
    let opts = solve_options(cfg);
    let r = &cfg.rigidity;
    let n = cfg.density.n;
    let res = r.res[0];
    let mut fails = Failures::default();
    let grid = Grid::new(n, 1, res)?.unconstrained();
    let samples = deformation_samples(&grid, 4 * r.n_fields + 1, &[0.01, 0.1, 0.5], cfg.seed)?;
    let t = Instant::now();
    let ratio = rigidity_ratio(&grid, &samples, r.p, runner.pool());
    let mut row = Row::new("rigidity", "rigidity_ratio", f64::NAN);
    row.k = 1;
    row.res = res;
    row.seed = cfg.seed;
    let c_est = match ratio {
        Ok(c) => {
            row.value = c.value;
            row.wall_time_s = t.elapsed().as_secs_f64();
            report.check(
                "ratio_at_least_one",
                c.value >= 1.0 - 1e-12,
                format!("{} samples used, {} skipped", c.samples_used, c.skipped),
            );
            Some(c.value)
        }
        Err(e) => {
            fails.add("rigidity_ratio", e);
            row.converged = false;
            None
        }
    };
    report.push(row);
    if cfg.density.kind == DensityKind::SingleWell {
        if let Some(c) = c_est {
            let xs = zhang_points(cfg);
            match zhang_check(&cfg.density, &xs, c, r.slack, cfg.cell.res, &opts, runner.pool()) {
                Ok(z) => {
                    let mut rot_zero = true;
                    for zr in &z.rows {
                        let mut row = Row::new("rigidity:zhang", "zhang_margin", zr.margin);
                        row.x = flat(&zr.x);
                        row.k = 1;
                        row.res = cfg.cell.res;
                        row.seed = cfg.seed;
                        report.push(row);
                        if dist_so(&zr.x) == 0.0 {
                            rot_zero &= zr.margin == 0.0;
                        }
                    }
                    report.check("zhang_margins", z.all_pass, "qc >= slack C^-p dist^p at every X");
                    report.check("zhang_rotation_zero", rot_zero, "margin exactly 0 on SO(n)");
                }
                Err(e) => fails.add("zhang_check", e),
            }
        }
    }
    if let (Some(alpha), Some(gamma)) = (r.alpha, r.gamma) {
        let g = Grid::new(n, 1, cfg.cell.res)?;
        match garding_check(&cfg.density, &g, alpha, gamma, r.n_fields, cfg.seed, runner.pool()) {
            Ok(est) => {
                let mut row = Row::new("rigidity:garding", "garding_residual", est.worst_residual);
                row.k = 1;
                row.res = cfg.cell.res;
                row.seed = cfg.seed;
                report.push(row);
                report.check(
                    "garding",
                    est.passed,
                    format!("{} violations over {} samples", est.violations, est.samples),
                );
            }
            Err(e) => fails.add("garding_check", e),
        }
    }
    fails.finish(report);
    Ok(())
}
