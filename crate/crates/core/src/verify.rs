//! Invariant suites behind `bipen verify`.
//!
//! Each check returns `Ok(None)` when it holds and `Ok(Some(counterexample))`
//! otherwise. The prox step is pluggable so that a deliberately broken step
//! can be shown to trip the contraction check.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::landscape::{self, Accuracy};
use crate::oracle::{Oracle, OracleConfig};
use crate::problem::BilevelProblem;
use crate::prox::{default_step, projected_step, prox_point};
use crate::solver::{
    make_schedule, potential, run_collect, Algorithm, PotentialConstants, PotentialVariant, Preset, RunOptions,
    Schedule, ScheduleConstants, SolverState,
};
use crate::testbed::{build, default_grid_resolution, grid_oracle, TestbedName};
use crate::trace::{fit_rate, parse_trace, Column, MetricRow, TraceWriter};

/// Signature of [`projected_step`].
pub type ProxStep =
    fn(&ConvexDomain, &DVector<f64>, &DVector<f64>, &DVector<f64>, f64, f64) -> Result<DVector<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(Error::argument(format!("unknown verify level '{other}'"))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Fast => "fast",
            Level::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Counterexample or error text of a failed check.
    pub detail: Option<String>,
}

pub type Check = fn(&Suite) -> Result<Option<String>>;

pub struct Suite {
    pub level: Level,
    pub prox_step: ProxStep,
}

/// Rho used by the solver checks; `rho l_g1 < 1/4` on every instance.
const RHO: f64 = 0.05;

impl Suite {
    pub fn new(level: Level) -> Self {
        Suite {
            level,
            prox_step: projected_step,
        }
    }

    pub fn with_prox_step(mut self, step: ProxStep) -> Self {
        self.prox_step = step;
        self
    }

    fn scale(&self, fast: usize, full: usize) -> usize {
        match self.level {
            Level::Fast => fast,
            Level::Full => full,
        }
    }

    pub fn checks(&self) -> Vec<(&'static str, Check)> {
        let mut checks: Vec<(&'static str, Check)> = vec![
            ("projection_idempotent", check_projection),
            ("prox_contraction", check_contraction),
            ("closed_form_matches_grid", check_closed_forms),
            ("psi_sigma_below_psi", check_value_gap),
            ("oracle_accounting", check_accounting),
            ("algorithm_equivalence", check_equivalence),
            ("potential_lower_bound", check_potential_floor),
            ("trace_roundtrip", check_trace_roundtrip),
            ("config_roundtrip", check_config_roundtrip),
        ];
        if self.level == Level::Full {
            checks.extend_from_slice(&[
                ("deterministic_rate", check_deterministic_rate as Check),
                ("potential_descent", check_potential_descent),
                ("stationarity_bridge", check_bridge),
                ("stochastic_ordering", check_stochastic_ordering),
            ]);
        }
        checks
    }

    /// Runs every check in order, reporting each outcome as it finishes.
    pub fn run(&self, on_result: &mut dyn FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
        self.checks()
            .into_iter()
            .map(|(name, check)| {
                let outcome = match check(self) {
                    Ok(None) => CheckOutcome {
                        name,
                        passed: true,
                        detail: None,
                    },
                    Ok(Some(cx)) => CheckOutcome {
                        name,
                        passed: false,
                        detail: Some(cx),
                    },
                    Err(e) => CheckOutcome {
                        name,
                        passed: false,
                        detail: Some(format!("error: {e}")),
                    },
                };
                on_result(&outcome);
                outcome
            })
            .collect()
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5eed_0000 + tag)
}

fn uniform(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(lo..hi))
}

fn random_x(rng: &mut ChaCha8Rng, p: &BilevelProblem) -> DVector<f64> {
    match p.domain_x.bounding_box() {
        Some((lo, hi)) => DVector::from_fn(p.dim_x(), |i, _| rng.random_range(lo[i]..=hi[i])),
        None => uniform(rng, p.dim_x(), -2.0, 2.0),
    }
}

fn random_y(rng: &mut ChaCha8Rng, p: &BilevelProblem) -> Result<DVector<f64>> {
    p.domain_y.project_vec(&uniform(rng, p.dim_y(), -2.0, 2.0))
}

fn check_projection(suite: &Suite) -> Result<Option<String>> {
    let mut rng = rng(1);
    let domains = [
        ConvexDomain::cube(3, -1.0, 0.5)?,
        ConvexDomain::ball(DVector::from_column_slice(&[0.5, -0.5, 1.0]), 0.7)?,
        ConvexDomain::simplex(3)?,
        ConvexDomain::full(3),
    ];
    for d in &domains {
        for _ in 0..suite.scale(200, 2000) {
            let p = uniform(&mut rng, 3, -3.0, 3.0);
            let q = d.project_vec(&p)?;
            let qq = d.project_vec(&q)?;
            if !d.contains(&q, 1e-9) || (&qq - &q).amax() > 1e-12 {
                return Ok(Some(format!("domain {:?}, point {:?}", d.kind(), p.as_slice())));
            }
        }
    }
    Ok(None)
}

/// Largest observed per-step distance ratio minus its bound
/// `1 - gamma / (4 rho)` over random quad_sc prox problems.
pub fn contraction_worst(step: ProxStep, configs: usize, seed: u64) -> Result<(f64, Option<String>)> {
    let p = build(TestbedName::QuadSc).base;
    let mut rng = rng(100 + seed);
    let mut worst = f64::NEG_INFINITY;
    let mut example = None;
    for _ in 0..configs {
        let x = random_x(&mut rng, &p);
        let sigma = rng.random_range(0.0..1.0);
        let rho = rng.random_range(0.005..0.09);
        let gamma = default_step(&p, rho, sigma) * rng.random_range(0.05..1.0);
        let anchor = uniform(&mut rng, 2, -3.0, 3.0);
        let target = prox_point(&p, &x, sigma, rho, &anchor)?;
        let mut u = uniform(&mut rng, 2, -3.0, 3.0);
        for _ in 0..5 {
            let before = (&u - &target).norm();
            if before < 1e-9 {
                break;
            }
            let grad = p.h_gradient(&x, &u, sigma).1;
            u = step(&p.domain_y, &u, &anchor, &grad, gamma, rho)?;
            let ratio = (&u - &target).norm() / before;
            let excess = ratio - (1.0 - gamma / (4.0 * rho));
            if excess > worst {
                worst = excess;
                example = Some(format!(
                    "x={:?} sigma={sigma:e} rho={rho:e} gamma={gamma:e} anchor={:?} ratio={ratio:.12}",
                    x.as_slice(),
                    anchor.as_slice()
                ));
            }
        }
    }
    Ok((worst, example))
}

fn check_contraction(suite: &Suite) -> Result<Option<String>> {
    let (worst, example) = contraction_worst(suite.prox_step, suite.scale(1000, 10_000), 0)?;
    Ok((worst > 1e-10).then(|| example.unwrap_or_default()))
}

fn check_closed_forms(suite: &Suite) -> Result<Option<String>> {
    let mut rng = rng(2);
    for name in TestbedName::ALL {
        let tp = build(name);
        let p = &tp.base;
        if !p.domain_y.is_bounded() {
            continue;
        }
        let res = default_grid_resolution(p.dim_y());
        let xs: Vec<_> = (0..suite.scale(10, 50)).map(|_| random_x(&mut rng, p)).collect();
        for x in &xs {
            let grid = grid_oracle(p, x, 0.0, res)?;
            let psi = grid
                .argmin_set
                .iter()
                .map(|y| p.f.value(x, y))
                .fold(f64::INFINITY, f64::min);
            let closed = tp.closed_form().psi(x);
            if (psi - closed).abs() > 2.0 * res {
                return Ok(Some(format!("{name} x={:?} grid={psi} closed={closed}", x.as_slice())));
            }
        }
    }
    Ok(None)
}

fn check_value_gap(suite: &Suite) -> Result<Option<String>> {
    let mut rng = rng(3);
    for name in TestbedName::ALL {
        let p = build(name).base;
        for _ in 0..suite.scale(10, 100) {
            let x = random_x(&mut rng, &p);
            let sigma = 10f64.powf(rng.random_range(-3.0..0.0));
            let ps = landscape::eval_psi_sigma(&p, &x, sigma, Accuracy::ClosedForm)?;
            let psi = landscape::eval_psi(&p, &x)?;
            if ps > psi + 1e-8 * (1.0 + psi.abs()) / sigma {
                return Ok(Some(format!("{name} x={:?} sigma={sigma:e} psi_sigma={ps} psi={psi}", x.as_slice())));
            }
        }
    }
    Ok(None)
}

fn quiet_options() -> RunOptions {
    RunOptions {
        track_potential: false,
        report_every: u64::MAX,
        ..RunOptions::default()
    }
}

fn check_accounting(_: &Suite) -> Result<Option<String>> {
    let p = build(TestbedName::ConstrainedSc).base;
    let oracle = Oracle::new(OracleConfig::gaussian(0.1, 0.1)?);
    let k = 15;
    for preset in [Preset::StochUpper, Preset::StochBoth] {
        let s = make_schedule(preset, RHO, &ScheduleConstants::default())?;
        let (state, _) = run_collect(&p, Algorithm::DoubleLoop, &s, &oracle, k, 1, &quiet_options())?;
        let want: u64 = (0..k).map(|j| 3 * (s.inner_steps(j) + s.batch(j)) as u64).sum();
        if state.oracle_calls.total() != want {
            return Ok(Some(format!("{preset}: counted {} expected {want}", state.oracle_calls.total())));
        }
    }
    let s = make_schedule(Preset::MomBoth, RHO, &ScheduleConstants::default())?;
    let (state, _) = run_collect(&p, Algorithm::SingleLoop, &s, &oracle, k, 1, &quiet_options())?;
    let want = 6 + 12 * (k - 1);
    if state.oracle_calls.total() != want {
        return Ok(Some(format!("mom_both: counted {} expected {want}", state.oracle_calls.total())));
    }
    Ok(None)
}

/// Schedule with `eta = 1` and `T = M = 1` shared by both methods.
pub fn equivalence_schedule(rho: f64) -> Result<Schedule> {
    make_schedule(Preset::MomDet, rho, &ScheduleConstants::default())
}

/// First testbed on which the two methods diverge bitwise within `k` steps.
pub fn first_equivalence_break(k: u64) -> Result<Option<String>> {
    let s = equivalence_schedule(RHO)?;
    let oracle = Oracle::exact();
    for name in TestbedName::ALL {
        let p = build(name).base;
        let (a, _) = run_collect(&p, Algorithm::DoubleLoop, &s, &oracle, k, 0, &quiet_options())?;
        let (b, _) = run_collect(&p, Algorithm::SingleLoop, &s, &oracle, k, 0, &quiet_options())?;
        let same = |u: &DVector<f64>, v: &DVector<f64>| u.iter().zip(v.iter()).all(|(p, q)| p.to_bits() == q.to_bits());
        if !(same(&a.x, &b.x) && same(&a.y, &b.y) && same(&a.z, &b.z) && same(&a.w_y, &b.w_y) && same(&a.w_z, &b.w_z)) {
            return Ok(Some(format!("{name}: double {a} single {b}")));
        }
    }
    Ok(None)
}

fn check_equivalence(_: &Suite) -> Result<Option<String>> {
    first_equivalence_break(100)
}

fn check_potential_floor(suite: &Suite) -> Result<Option<String>> {
    let mut rng = rng(4);
    let s = make_schedule(Preset::Det, RHO, &ScheduleConstants::default())?;
    let c = PotentialConstants::default();
    for name in TestbedName::ALL {
        let p = build(name).base;
        let c_f = p.constants.c_f.unwrap_or(f64::INFINITY);
        for _ in 0..suite.scale(40, 200) {
            let x = random_x(&mut rng, &p);
            let mut state = SolverState::new(&p, x, random_y(&mut rng, &p)?, random_y(&mut rng, &p)?, 1.0)?;
            state.w_y = random_y(&mut rng, &p)?;
            state.w_z = random_y(&mut rng, &p)?;
            state.k = rng.random_range(0..1000);
            let v = potential(&p, &state, &s, PotentialVariant::Double, &c, Accuracy::ClosedForm)?.unwrap_or(0.0);
            if v < -c_f {
                return Ok(Some(format!("{name} potential {v} below -{c_f} at {state}")));
            }
        }
    }
    Ok(None)
}

fn check_trace_roundtrip(suite: &Suite) -> Result<Option<String>> {
    let mut rng = rng(5);
    let r = |rng: &mut ChaCha8Rng| rng.random::<f64>() * 10f64.powi(rng.random_range(-300..300));
    let rows: Vec<MetricRow> = (0..suite.scale(1000, 10_000) as u64)
        .map(|k| MetricRow {
            k,
            sigma: r(&mut rng),
            alpha: r(&mut rng),
            beta: r(&mut rng),
            gamma: r(&mut rng),
            eta: r(&mut rng),
            t: rng.random(),
            m: rng.random(),
            delta_x: r(&mut rng),
            delta_y: r(&mut rng),
            delta_z: r(&mut rng),
            eps_level: r(&mut rng),
            potential: rng.random_bool(0.5).then(|| -r(&mut rng)),
            psi_sigma: rng.random_bool(0.5).then(|| r(&mut rng)),
            oracle_calls: 10 * k,
            wall_ms: r(&mut rng),
        })
        .collect();
    let mut w = TraceWriter::new(Vec::new())?;
    for row in &rows {
        w.write_row(row)?;
    }
    let back = parse_trace(w.into_inner()?.as_slice())?;
    for (a, b) in rows.iter().zip(&back) {
        if a.to_csv() != b.to_csv() || a != b {
            return Ok(Some(format!("row {a:?} read back as {b:?}")));
        }
    }
    Ok((back.len() != rows.len()).then(|| format!("{} rows read back as {}", rows.len(), back.len())))
}

fn check_config_roundtrip(_: &Suite) -> Result<Option<String>> {
    let mut cfg = RunConfig {
        problem: TestbedName::PlMultisol,
        algorithm: Algorithm::SingleLoop,
        preset: Preset::MomUpper,
        rho: 1.0 / 30.0,
        noise_f: 0.1,
        sigmas: vec![0.1, 1e-3, 1.0 / 3.0],
        ..RunConfig::default()
    };
    cfg.constants.alpha0 = Some(0.007);
    cfg.constants.k0 = Some(3);
    let back = RunConfig::parse(&cfg.serialize())?;
    Ok((back != cfg).then(|| cfg.serialize()))
}

/// Deterministic double-loop run on quad_sc: `alpha0 = rho`, `sigma_K = 1e-2`.
pub fn deterministic_run(k: u64, track_potential: bool) -> Result<Vec<MetricRow>> {
    let p = build(TestbedName::QuadSc).base;
    let constants = ScheduleConstants {
        alpha0: Some(RHO),
        eps_target: Some(1e-2),
        horizon: Some(k),
        ..ScheduleConstants::default()
    };
    let s = make_schedule(Preset::Det, RHO, &constants)?;
    let options = RunOptions {
        track_potential,
        diagnostics: Accuracy::ClosedForm,
        ..RunOptions::default()
    };
    Ok(run_collect(&p, Algorithm::DoubleLoop, &s, &Oracle::exact(), k, 0, &options)?.1)
}

fn check_deterministic_rate(_: &Suite) -> Result<Option<String>> {
    let k = 10_000;
    let rows = deterministic_run(k, false)?;
    let fit = fit_rate(&rows, Column::DeltaX, 1..=k)?;
    let last = rows.last().expect("K >= 1").eps_level;
    Ok((fit.slope > -0.25 || last > 1e-2).then(|| format!("slope {} final eps_level {last}", fit.slope)))
}

/// `(min potential, summed positive increments)` of a trace.
pub fn potential_profile(rows: &[MetricRow]) -> (f64, f64) {
    let v: Vec<f64> = rows.iter().filter_map(|r| r.potential).collect();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let rise = v.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum();
    (min, rise)
}

fn check_potential_descent(_: &Suite) -> Result<Option<String>> {
    let k = 1000;
    let c_f = build(TestbedName::QuadSc).base.constants.c_f.unwrap_or(f64::INFINITY);
    let (min, rise) = potential_profile(&deterministic_run(k, true)?);
    let cap = 20.0 * c_f * (k as f64).ln();
    Ok((min < -c_f || rise > cap).then(|| format!("min potential {min}, positive increments {rise} (cap {cap})")))
}

fn check_bridge(_: &Suite) -> Result<Option<String>> {
    let k = 10_000;
    let p = build(TestbedName::QuadSc).base;
    let constants = ScheduleConstants {
        alpha0: Some(RHO),
        eps_target: Some(1e-2),
        horizon: Some(k),
        ..ScheduleConstants::default()
    };
    let s = make_schedule(Preset::Det, RHO, &constants)?;
    let (state, rows) = run_collect(&p, Algorithm::DoubleLoop, &s, &Oracle::exact(), k, 0, &quiet_options())?;
    let eps = rows.last().expect("K >= 1").eps_level;
    let sigma = s.sigma(k);
    let grad = landscape::grad_psi_sigma_fd_with(&p, &state.x, sigma, 1e-6, Accuracy::ClosedForm)?.norm();
    let (mu, _) = p.constants.eb.expect("quad_sc declares its error bound");
    let bound = (1.0 + p.constants.l_g1.expect("declared") / mu) * eps * 1.1;
    Ok((grad > bound).then(|| format!("|grad psi_sigma| = {grad} exceeds {bound}")))
}

/// Median final eps_level of both methods at an equal budget of
/// gradient calls with noise `0.1` in both levels.
pub fn stochastic_medians(budget: u64, seeds: u64) -> Result<(f64, f64)> {
    let p = build(TestbedName::QuadSc).base;
    let oracle = Oracle::new(OracleConfig::gaussian(0.1, 0.1)?);
    let median = |preset: Preset, algorithm: Algorithm| -> Result<f64> {
        let probe = make_schedule(preset, RHO, &ScheduleConstants::default())?;
        let k = iterations_within(&probe, algorithm, budget);
        let s = make_schedule(
            preset,
            RHO,
            &ScheduleConstants {
                horizon: Some(k),
                ..ScheduleConstants::default()
            },
        )?;
        let options = RunOptions {
            track_potential: false,
            report_every: k,
            ..RunOptions::default()
        };
        let mut finals = (0..seeds)
            .into_par_iter()
            .map(|seed| {
                let (_, rows) = run_collect(&p, algorithm, &s, &oracle, k, seed, &options)?;
                Ok(rows.last().expect("K >= 1").eps_level)
            })
            .collect::<Result<Vec<f64>>>()?;
        finals.sort_by(f64::total_cmp);
        let n = finals.len();
        Ok(if n % 2 == 1 {
            finals[n / 2]
        } else {
            0.5 * (finals[n / 2 - 1] + finals[n / 2])
        })
    };
    Ok((
        median(Preset::MomBoth, Algorithm::SingleLoop)?,
        median(Preset::StochBoth, Algorithm::DoubleLoop)?,
    ))
}

/// Largest `K` whose gradient calls fit in `budget`.
pub fn iterations_within(schedule: &Schedule, algorithm: Algorithm, budget: u64) -> u64 {
    let mut used = 0u64;
    let mut k = 0u64;
    loop {
        let cost = match algorithm {
            Algorithm::DoubleLoop => 3 * (schedule.inner_steps(k) + schedule.batch(k)) as u64,
            Algorithm::SingleLoop if k == 0 || schedule.eta(k) >= 1.0 => 6,
            Algorithm::SingleLoop => 12,
        };
        if used + cost > budget {
            return k;
        }
        used += cost;
        k += 1;
    }
}

fn check_stochastic_ordering(_: &Suite) -> Result<Option<String>> {
    let (single, double) = stochastic_medians(1_000_000, 20)?;
    Ok((single > double).then(|| format!("single-loop median {single} above double-loop median {double}")))
}
