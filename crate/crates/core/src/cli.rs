//! Subcommand implementations behind the `bipen` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{error, info};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::landscape::{self, Accuracy};
use crate::oracle::Oracle;
use crate::solver::{run, RunOptions};
use crate::testbed::build;
use crate::trace::TraceWriter;
use crate::verify::{CheckOutcome, Level, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit code for an error: 3 for numerical failures, 2 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub const LANDSCAPE_HEADER: &str = "x,sigma,psi_sigma,psi,grad_fd,grad_formula";

/// Sweeps `x = t * ones` for `t` on the configured grid and every `sigma`,
/// writing `<output>/landscape.csv`. Gradients are directional derivatives
/// along `ones`. Returns the written path.
pub fn cmd_landscape(cfg: &RunConfig) -> Result<PathBuf> {
    let tp = build(cfg.problem);
    let p = &tp.base;
    let ones = DVector::from_element(p.dim_x(), 1.0);
    let ts: Vec<f64> = if cfg.x_steps == 1 {
        vec![cfg.x_min]
    } else {
        let h = (cfg.x_max - cfg.x_min) / (cfg.x_steps - 1) as f64;
        (0..cfg.x_steps).map(|i| cfg.x_min + h * i as f64).collect()
    };
    let xs: Vec<DVector<f64>> = ts.iter().map(|t| &ones * *t).collect();
    let samples = landscape::sweep(p, &xs, &cfg.sigmas, cfg.fd_step, Accuracy::high())?;

    fs::create_dir_all(&cfg.output)?;
    let path = cfg.output.join("landscape.csv");
    let mut out = BufWriter::new(fs::File::create(&path)?);
    writeln!(out, "{LANDSCAPE_HEADER}")?;
    let ts_cycle = ts.iter().cycle();
    for (s, t) in samples.iter().zip(ts_cycle) {
        let dir = |g: &Option<DVector<f64>>| g.as_ref().map(|g| g.dot(&ones));
        writeln!(
            out,
            "{},{},{},{},{},{}",
            real(*t),
            real(s.sigma),
            real(s.psi_sigma),
            opt(s.psi),
            opt(dir(&s.grad_fd)),
            opt(dir(&s.grad_formula))
        )?;
    }
    out.flush()?;
    Ok(path)
}

/// Final numbers of one replica.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaSummary {
    pub replica: u64,
    pub seed: u64,
    pub eps_level: f64,
    pub oracle_calls: u64,
    pub path: PathBuf,
}

pub fn replica_path(output: &Path, r: u64) -> PathBuf {
    output.join(format!("replica_{r}.csv"))
}

/// Runs one replica, streaming its trace; the rows written before a failure
/// stay on disk.
pub fn solve_replica(cfg: &RunConfig, r: u64) -> Result<ReplicaSummary> {
    let p = build(cfg.problem).base;
    let schedule = cfg.schedule()?;
    let oracle = Oracle::new(cfg.oracle_config()?);
    let seed = cfg.replica_seed(r);
    let options = RunOptions {
        track_potential: cfg.track_potential,
        track_psi_sigma: cfg.track_psi_sigma,
        report_every: cfg.report_every,
        record_wall_time: cfg.record_wall_time,
        diagnostics: Accuracy::ClosedForm,
        ..RunOptions::default()
    };
    let path = replica_path(&cfg.output, r);
    let mut writer = TraceWriter::create(&path)?;
    let mut last = None;
    let outcome = run(&p, cfg.algorithm, &schedule, &oracle, cfg.k, seed, &options, &mut |row, _| {
        last = Some(*row);
        writer.write_row(row)
    });
    writer.flush()?;
    outcome?;
    let last = last.expect("the final iterate is always reported");
    Ok(ReplicaSummary {
        replica: r,
        seed,
        eps_level: last.eps_level,
        oracle_calls: last.oracle_calls,
        path,
    })
}

pub fn summary_line(s: &ReplicaSummary) -> String {
    format!(
        "replica {} seed {} eps_level {:.6e} oracle_calls {} trace {}",
        s.replica,
        s.seed,
        s.eps_level,
        s.oracle_calls,
        s.path.display()
    )
}

/// Runs all replicas on at most `jobs` threads and prints one summary line
/// per finished replica. Fails with the error of the lowest failing replica.
pub fn cmd_solve(cfg: &RunConfig, jobs: usize) -> Result<Vec<ReplicaSummary>> {
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("config.txt"), cfg.serialize())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<ReplicaSummary>> = pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let res = solve_replica(cfg, r);
                match &res {
                    Ok(s) => {
                        let line = summary_line(s);
                        let mut stdout = std::io::stdout().lock();
                        let _ = writeln!(stdout, "{line}");
                    }
                    Err(e) => error!("replica {r} failed: {e}"),
                }
                res
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Runs the invariant suite, printing one line per check and, on failure,
/// the first counterexample. Returns whether every check passed.
pub fn cmd_verify(level: Level, out: &mut dyn Write) -> Result<bool> {
    info!("running {level} verification");
    let suite = Suite::new(level);
    let mut io_err = None;
    let outcomes = suite.run(&mut |o: &CheckOutcome| {
        let line = match (&o.passed, &o.detail) {
            (true, _) => format!("PASS {}", o.name),
            (false, Some(d)) => format!("FAIL {}: {d}", o.name),
            (false, None) => format!("FAIL {}", o.name),
        };
        if let Err(e) = writeln!(out, "{line}") {
            io_err.get_or_insert(e);
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(first) = outcomes.iter().find(|o| !o.passed) {
        writeln!(
            out,
            "first counterexample ({}): {}",
            first.name,
            first.detail.as_deref().unwrap_or("none")
        )?;
        return Ok(false);
    }
    Ok(true)
}

/// Worker count: the explicit value, else all available cores.
pub fn resolve_jobs(jobs: Option<usize>) -> usize {
    jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}
