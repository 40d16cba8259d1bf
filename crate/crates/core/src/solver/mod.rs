//! Double-loop and single-loop first-order methods on the envelope saddle
//! problem, with their schedules and diagnostics.

mod run;
mod schedule;
mod state;
mod stationarity;
mod steps;

pub use run::{default_start, report, run, run_collect, step, Algorithm, RunOptions};
pub use schedule::{
    make_schedule, Exponents, Preset, Schedule, ScheduleConstants, StepSizes, DEFAULT_BETA0, DEFAULT_EPS_TARGET,
    DEFAULT_HORIZON, DEFAULT_K0,
};
pub use state::{EstimatorErrors, MomentumState, OracleCalls, SolverState};
pub use stationarity::{
    phi, potential, prox_points, stationarity, PotentialConstants, PotentialVariant, ProxPoints, StationarityReport,
};
pub use steps::{double_loop_step, single_loop_step};

#[cfg(test)]
mod tests;
