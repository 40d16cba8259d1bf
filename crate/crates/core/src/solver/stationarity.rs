//! Stationarity residuals of the envelope saddle problem and the potential
//! functions of both methods.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::landscape::{self, Accuracy};
use crate::problem::BilevelProblem;
use crate::prox::{envelope_at, prox_point};

use super::schedule::Schedule;
use super::state::SolverState;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationarityReport {
    pub delta_x_norm: f64,
    pub delta_y_norm: f64,
    pub delta_z_norm: f64,
    pub potential: Option<f64>,
    pub psi_sigma: Option<f64>,
    /// `max(|dx|, |dy|, |dz|) / sigma`.
    pub epsilon_level: f64,
}

/// High-accuracy prox points `w*_y` and `w*_z` at a triple.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxPoints {
    pub w_y: DVector<f64>,
    pub w_z: DVector<f64>,
}

pub fn prox_points(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    sigma: f64,
    rho: f64,
) -> Result<ProxPoints> {
    Ok(ProxPoints {
        w_y: prox_point(problem, x, sigma, rho, y)?,
        w_z: prox_point(problem, x, 0.0, rho, z)?,
    })
}

/// `Delta^y = (y - w*_y) / rho`, `Delta^z = (z - w*_z) / rho` and
/// `Delta^x = (x - Pi_X[x - rho (grad_x h_sigma(x, w*_y) - grad_x g(x, w*_z))]) / rho`.
pub fn stationarity(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    sigma: f64,
    rho: f64,
) -> Result<StationarityReport> {
    let points = prox_points(problem, x, y, z, sigma, rho)?;
    stationarity_at(problem, x, y, z, sigma, rho, &points)
}

pub(crate) fn stationarity_at(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    sigma: f64,
    rho: f64,
    points: &ProxPoints,
) -> Result<StationarityReport> {
    if !(sigma > 0.0) {
        return Err(Error::argument("stationarity needs sigma > 0"));
    }
    let dy = (y - &points.w_y) / rho;
    let dz = (z - &points.w_z) / rho;
    let grad = problem.h_gradient(x, &points.w_y, sigma).0 - problem.g.gradient(x, &points.w_z).0;
    let x_hat = problem.domain_x.project_vec(&(x - grad * rho))?;
    let dx = (x - x_hat) / rho;
    let (nx, ny, nz) = (dx.norm(), dy.norm(), dz.norm());
    Ok(StationarityReport {
        delta_x_norm: nx,
        delta_y_norm: ny,
        delta_z_norm: nz,
        potential: None,
        psi_sigma: None,
        epsilon_level: nx.max(ny).max(nz) / sigma,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialVariant {
    Double,
    Momentum,
}

/// Weights `C`, `C_w` and `C_eta` of the potential functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialConstants {
    pub c: f64,
    pub c_w: f64,
    pub c_eta: f64,
}

impl Default for PotentialConstants {
    fn default() -> Self {
        PotentialConstants {
            c: 4.0,
            c_w: 1.0,
            c_eta: 1.0,
        }
    }
}

/// `Phi = (h*(x, y) - g*_rho(x, z)) / sigma + C (g*_rho(x, z) - g*(x)) / sigma`.
pub fn phi(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    sigma: f64,
    rho: f64,
    c: f64,
    points: &ProxPoints,
    accuracy: Accuracy,
) -> Result<f64> {
    let h_env = envelope_at(problem, x, sigma, rho, y, &points.w_y);
    let g_env = envelope_at(problem, x, 0.0, rho, z, &points.w_z);
    let g_star = landscape::value_function(problem, x, 0.0, accuracy)?;
    Ok((h_env - g_env) / sigma + c * (g_env - g_star) / sigma)
}

/// Potential of `state` under `schedule`.
///
/// The double-loop form adds `C_w lambda_k / (sigma rho)` times the squared
/// prox-tracking errors, `lambda_k = T_k gamma_k / (4 rho)`. The momentum
/// form drops `lambda_k` and adds `C_eta rho^2 / (sigma gamma_{k-1})` times
/// the latest squared estimator errors; it is `None` before the first step.
pub fn potential(
    problem: &BilevelProblem,
    state: &SolverState,
    schedule: &Schedule,
    variant: PotentialVariant,
    constants: &PotentialConstants,
    accuracy: Accuracy,
) -> Result<Option<f64>> {
    let sigma = schedule.sigma(state.k);
    let rho = schedule.rho;
    let points = prox_points(problem, &state.x, &state.y, &state.z, sigma, rho)?;
    potential_at(problem, state, schedule, variant, constants, accuracy, &points)
}

pub(crate) fn potential_at(
    problem: &BilevelProblem,
    state: &SolverState,
    schedule: &Schedule,
    variant: PotentialVariant,
    constants: &PotentialConstants,
    accuracy: Accuracy,
    points: &ProxPoints,
) -> Result<Option<f64>> {
    let k = state.k;
    let sigma = schedule.sigma(k);
    let rho = schedule.rho;
    let base = phi(problem, &state.x, &state.y, &state.z, sigma, rho, constants.c, points, accuracy)?;
    let tracking = (&state.w_y - &points.w_y).norm_squared() + (&state.w_z - &points.w_z).norm_squared();
    match variant {
        PotentialVariant::Double => {
            let lambda = schedule.inner_steps(k) as f64 * schedule.gamma(k) / (4.0 * rho);
            Ok(Some(base + constants.c_w * lambda / (sigma * rho) * tracking))
        }
        PotentialVariant::Momentum => {
            let (Some(errors), true) = (state.estimator_errors, k > 0) else {
                return Ok(None);
            };
            let noise = constants.c_eta * rho * rho / (sigma * schedule.gamma(k - 1)) * errors.total();
            Ok(Some(base + constants.c_w / (sigma * rho) * tracking + noise))
        }
    }
}
