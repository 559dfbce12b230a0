//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cache::Cache;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::plot::plot_report;
use crate::pool::Pool;
use crate::report::{Metadata, Report, VERSION};
use crate::xp::{self, Command, Runner, COMPUTE_CHECK};

#[derive(Debug, Parser)]
#[command(name = "gammacell", version, about = "Cell-problem homogenization and linearization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `[io] out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Global seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Also write an SVG plot.
    #[arg(long, global = true)]
    plot: bool,
    /// Validate and print the resolved jobs without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Result cache directory; overrides GAMMACELL_CACHE and `[io] cache`.
    #[arg(long, global = true, value_name = "DIR")]
    cache: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Cell values m_k(X) for every X and k.
    Cell,
    /// Homogenized density estimates along the k schedule.
    Homog,
    /// Envelope bounds (cell, laminate, 1D convex hull).
    Envelope,
    /// Korn constant on the unit cube across resolutions.
    Korn,
    /// Rigidity ratio, Zhang-type check and Gårding check.
    Rigidity,
    /// Commutability of homogenization and linearization.
    Commute,
    /// Equivalence profile of the rescaled densities.
    Equiv,
    /// Diagonal (k, delta) sequence against the linearized reference.
    Diagonal,
    /// Regularized cell values along a lambda schedule.
    Addition,
    /// Summarize the JSON reports in the output directory.
    Report,
}

impl Sub {
    fn command(&self) -> Option<Command> {
        Some(match self {
            Sub::Cell => Command::Cell,
            Sub::Homog => Command::Homog,
            Sub::Envelope => Command::Envelope,
            Sub::Korn => Command::Korn,
            Sub::Rigidity => Command::Rigidity,
            Sub::Commute => Command::Commute,
            Sub::Equiv => Command::Equiv,
            Sub::Diagonal => Command::Diagonal,
            Sub::Addition => Command::Addition,
            Sub::Report => return None,
        })
    }
}

const ALL: [Command; 9] = [
    Command::Cell,
    Command::Homog,
    Command::Envelope,
    Command::Korn,
    Command::Rigidity,
    Command::Commute,
    Command::Equiv,
    Command::Diagonal,
    Command::Addition,
];

fn usage() -> String {
    use clap::CommandFactory;
    Cli::command().render_usage().to_string()
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code: 0 on success, 1 on validation errors, 2 on compute failures.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) && cli.common.config.is_none() {
                eprintln!("{}", usage());
            }
            e.exit_code()
        }
    }
}

fn load(common: &Common) -> Result<Config> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::config("missing --config PATH"))?;
    let mut cfg = Config::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.io.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32> {
    let Some(cmd) = cli.command.command() else {
        return summarize(&cli.common);
    };
    let common = &cli.common;
    let cfg = load(common)?;
    let jobs = xp::plan(cmd, &cfg)?;
    println!("config_hash={} seed={}", cfg.hash(), cfg.seed);
    if common.dry_run {
        for j in &jobs {
            println!("{j}");
        }
        return Ok(0);
    }
    let pool = Pool::new(common.workers)?;
    let cache = cfg.cache_dir(common.cache.as_deref()).map(Cache::new);
    let runner = Runner::new(pool, cache);
    let report = xp::run(cmd, &cfg, &runner)?;
    let paths = emit(&report, &cfg.io.out, cmd.name(), &cfg.io.formats)?;
    if common.plot {
        paths_plot(&report, cmd, &cfg.io.out)?;
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    print_checks(&report, "");
    let failed = report.checks.iter().any(|c| c.name == COMPUTE_CHECK && !c.passed);
    Ok(if failed { 2 } else { 0 })
}

fn emit(report: &Report, out: &Path, stem: &str, formats: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for f in formats {
        let p = out.join(format!("{stem}.{f}"));
        report.write(f, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

fn paths_plot(report: &Report, cmd: Command, out: &Path) -> Result<()> {
    match plot_report(report, cmd.plot_kind(), cmd.plot_log()) {
        Ok(svg) => {
            let p = out.join(format!("{}.svg", cmd.name()));
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            crate::cache::write_atomic(&p, svg.as_bytes())?;
            println!("wrote {}", p.display());
        }
        Err(e) => eprintln!("warning: no plot: {e}"),
    }
    Ok(())
}

fn print_checks(report: &Report, prefix: &str) {
    for c in &report.checks {
        println!(
            "{prefix}{:<22} {}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
}

/// Merges `<command>.json` reports in the output directory into
/// `summary.{csv,json}`.
fn summarize(common: &Common) -> Result<i32> {
    let cfg = match &common.config {
        Some(_) => Some(load(common)?),
        None => None,
    };
    let out = match (&common.out, &cfg) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => c.io.out.clone(),
        (None, None) => return Err(Error::config("report needs --config PATH or --out DIR")),
    };
    let mut summary = Report::new(Metadata {
        config_hash: cfg.as_ref().map(|c| c.hash()).unwrap_or_default(),
        version: VERSION.into(),
        seed: common.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0),
        command: "report".into(),
    });
    let mut found = 0;
    for cmd in ALL {
        let p = out.join(format!("{}.json", cmd.name()));
        if !p.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let r = Report::from_json(&text)?;
        found += 1;
        println!(
            "{}: {} rows, config_hash={} seed={}",
            cmd.name(),
            r.rows.len(),
            r.metadata.config_hash,
            r.metadata.seed
        );
        print_checks(&r, "  ");
        if common.plot {
            paths_plot(&r, cmd, &out)?;
        }
        summary.rows.extend(r.rows.iter().cloned());
        for c in &r.checks {
            summary.check(format!("{}:{}", cmd.name(), c.name), c.passed, c.detail.clone());
        }
    }
    if found == 0 {
        return Err(Error::Report(format!("no reports found in {}", out.display())));
    }
    let formats = cfg.map(|c| c.io.formats).unwrap_or_else(|| vec!["csv".into(), "json".into()]);
    for p in emit(&summary, &out, "summary", &formats)? {
        println!("wrote {}", p.display());
    }
    Ok(0)
}
