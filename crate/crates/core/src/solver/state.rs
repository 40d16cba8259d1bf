use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::oracle::Stream;
use crate::problem::BilevelProblem;

/// Gradient evaluations charged per sample stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OracleCalls {
    pub by_stream: [u64; 5],
}

impl OracleCalls {
    pub fn add(&mut self, stream: Stream, n: u64) {
        self.by_stream[stream.index()] += n;
    }

    pub fn total(&self) -> u64 {
        self.by_stream.iter().sum()
    }
}

/// Recursive estimators of the single-loop method and the previous iterate
/// their corrections are paired against.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub f_wy: DVector<f64>,
    pub g_wy: DVector<f64>,
    pub g_wz: DVector<f64>,
    pub f_x: DVector<f64>,
    pub g_xy: DVector<f64>,
    pub g_xz: DVector<f64>,
    pub prev_x: DVector<f64>,
    pub prev_wy: DVector<f64>,
    pub prev_wz: DVector<f64>,
}

/// Squared estimator errors against exact gradients, from the latest
/// single-loop step: `(|e_x|^2, |e_wy|^2, |e_wz|^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorErrors {
    pub x: f64,
    pub wy: f64,
    pub wz: f64,
}

impl EstimatorErrors {
    pub fn total(&self) -> f64 {
        self.x + self.wy + self.wz
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub k: u64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub w_y: DVector<f64>,
    pub w_z: DVector<f64>,
    pub momentum: Option<MomentumState>,
    pub estimator_errors: Option<EstimatorErrors>,
    pub sigma_k: f64,
    pub oracle_calls: OracleCalls,
}

impl SolverState {
    /// Starts at `(x0, y0, z0)` with `w_y = y0` and `w_z = z0`.
    pub fn new(problem: &BilevelProblem, x0: DVector<f64>, y0: DVector<f64>, z0: DVector<f64>, sigma0: f64) -> Result<Self> {
        problem.check_feasible(&x0, &y0)?;
        problem.check_feasible(&x0, &z0)?;
        Ok(SolverState {
            k: 0,
            w_y: y0.clone(),
            w_z: z0.clone(),
            x: x0,
            y: y0,
            z: z0,
            momentum: None,
            estimator_errors: None,
            sigma_k: sigma0,
            oracle_calls: OracleCalls::default(),
        })
    }

    /// Feasibility of all iterates, within the projection tolerance.
    pub fn check_invariants(&self, problem: &BilevelProblem) -> Result<()> {
        problem.check_feasible(&self.x, &self.y)?;
        problem.check_feasible(&self.x, &self.z)?;
        problem.check_feasible(&self.x, &self.w_y)?;
        problem.check_feasible(&self.x, &self.w_z)
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        let all = [&self.x, &self.y, &self.z, &self.w_y, &self.w_z];
        if all.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::numerical(format!("non-finite iterate; state dump: {self}"), f64::NAN));
        }
        Ok(())
    }
}

impl fmt::Display for SolverState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |d: &DVector<f64>| format!("{:?}", d.as_slice());
        write!(
            f,
            "k={} sigma={:e} x={} y={} z={} w_y={} w_z={} calls={}",
            self.k,
            self.sigma_k,
            v(&self.x),
            v(&self.y),
            v(&self.z),
            v(&self.w_y),
            v(&self.w_z),
            self.oracle_calls.total()
        )
    }
}
