use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::debug;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::landscape::{self, Accuracy};
use crate::oracle::Oracle;
use crate::problem::BilevelProblem;
use crate::trace::MetricRow;

use super::schedule::Schedule;
use super::state::SolverState;
use super::stationarity::{potential_at, prox_points, stationarity_at, PotentialConstants, PotentialVariant};
use super::steps::{double_loop_step, single_loop_step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    DoubleLoop,
    SingleLoop,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DoubleLoop => "double_loop",
            Algorithm::SingleLoop => "single_loop",
        }
    }

    fn potential_variant(self) -> PotentialVariant {
        match self {
            Algorithm::DoubleLoop => PotentialVariant::Double,
            Algorithm::SingleLoop => PotentialVariant::Momentum,
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double_loop" => Ok(Algorithm::DoubleLoop),
            "single_loop" => Ok(Algorithm::SingleLoop),
            other => Err(Error::argument(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// `(x0, y0, z0)`; `None` uses [`default_start`].
    pub start: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
    pub track_potential: bool,
    pub track_psi_sigma: bool,
    pub potential_constants: PotentialConstants,
    /// Accuracy of the lower-level minimizations behind `psi_sigma` and the potential.
    pub diagnostics: Accuracy,
    /// Emit a row every this many iterates; `k = 0` and `k = K` are always emitted.
    pub report_every: u64,
    /// Wall time is written as 0 unless set, which keeps traces reproducible.
    pub record_wall_time: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            start: None,
            track_potential: true,
            track_psi_sigma: false,
            potential_constants: PotentialConstants::default(),
            diagnostics: Accuracy::high(),
            report_every: 1,
            record_wall_time: false,
        }
    }
}

/// `x0 = Pi_X(1.5 * ones)`, `y0 = z0 = Pi_Y(0)`.
pub fn default_start(problem: &BilevelProblem) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let x0 = problem.domain_x.project_vec(&DVector::from_element(problem.dim_x(), 1.5))?;
    let y0 = problem.domain_y.project_vec(&DVector::zeros(problem.dim_y()))?;
    Ok((x0, y0.clone(), y0))
}

/// Builds the metric row of `state`.
pub fn report(
    problem: &BilevelProblem,
    algorithm: Algorithm,
    schedule: &Schedule,
    state: &SolverState,
    options: &RunOptions,
) -> Result<MetricRow> {
    let k = state.k;
    let s = schedule.at(k);
    let points = prox_points(problem, &state.x, &state.y, &state.z, s.sigma, schedule.rho)?;
    let st = stationarity_at(problem, &state.x, &state.y, &state.z, s.sigma, schedule.rho, &points)?;
    let potential = if options.track_potential {
        potential_at(
            problem,
            state,
            schedule,
            algorithm.potential_variant(),
            &options.potential_constants,
            options.diagnostics,
            &points,
        )?
    } else {
        None
    };
    let psi_sigma = if options.track_psi_sigma {
        Some(landscape::eval_psi_sigma(problem, &state.x, s.sigma, options.diagnostics)?)
    } else {
        None
    };
    Ok(MetricRow {
        k,
        sigma: s.sigma,
        alpha: s.alpha,
        beta: s.beta,
        gamma: s.gamma,
        eta: s.eta,
        t: s.t as u64,
        m: s.m as u64,
        delta_x: st.delta_x_norm,
        delta_y: st.delta_y_norm,
        delta_z: st.delta_z_norm,
        eps_level: st.epsilon_level,
        potential,
        psi_sigma,
        oracle_calls: state.oracle_calls.total(),
        wall_ms: 0.0,
    })
}

pub fn step(
    problem: &BilevelProblem,
    algorithm: Algorithm,
    state: &SolverState,
    schedule: &Schedule,
    oracle: &Oracle,
    seed: u64,
) -> Result<SolverState> {
    match algorithm {
        Algorithm::DoubleLoop => double_loop_step(problem, state, schedule, oracle, seed),
        Algorithm::SingleLoop => single_loop_step(problem, state, schedule, oracle, seed),
    }
}

/// Runs `k_max` outer iterations and hands every reported row to `callback`
/// together with the state it describes. Returns the final state.
#[allow(clippy::too_many_arguments)]
pub fn run(
    problem: &BilevelProblem,
    algorithm: Algorithm,
    schedule: &Schedule,
    oracle: &Oracle,
    k_max: u64,
    seed: u64,
    options: &RunOptions,
    callback: &mut dyn FnMut(&MetricRow, &SolverState) -> Result<()>,
) -> Result<SolverState> {
    if k_max == 0 {
        return Err(Error::argument("K must be at least 1"));
    }
    if options.report_every == 0 {
        return Err(Error::argument("report_every must be at least 1"));
    }
    schedule.validate()?;
    if algorithm == Algorithm::SingleLoop {
        oracle.require_smooth()?;
    }
    let (x0, y0, z0) = match &options.start {
        Some(start) => start.clone(),
        None => default_start(problem)?,
    };
    let mut state = SolverState::new(problem, x0, y0, z0, schedule.sigma(0))?;
    let clock = Instant::now();
    loop {
        let k = state.k;
        if k % options.report_every == 0 || k == k_max {
            let mut row = report(problem, algorithm, schedule, &state, options)?;
            if options.record_wall_time {
                row.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            }
            callback(&row, &state)?;
        }
        if k == k_max {
            break;
        }
        state = step(problem, algorithm, &state, schedule, oracle, seed)?;
        if state.k % 1000 == 0 {
            debug!("{} k={} calls={}", algorithm, state.k, state.oracle_calls.total());
        }
    }
    Ok(state)
}

/// [`run`] collecting the rows.
#[allow(clippy::too_many_arguments)]
pub fn run_collect(
    problem: &BilevelProblem,
    algorithm: Algorithm,
    schedule: &Schedule,
    oracle: &Oracle,
    k_max: u64,
    seed: u64,
    options: &RunOptions,
) -> Result<(SolverState, Vec<MetricRow>)> {
    let mut rows = Vec::new();
    let state = run(problem, algorithm, schedule, oracle, k_max, seed, options, &mut |row, _| {
        rows.push(*row);
        Ok(())
    })?;
    Ok((state, rows))
}
