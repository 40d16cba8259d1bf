//! One outer iteration of the double-loop and the single-loop method.

use nalgebra::DVector;

use crate::error::Result;
use crate::oracle::{Oracle, SeedPath, Stream};
use crate::problem::BilevelProblem;
use crate::prox::{combine, projected_step};

use super::schedule::Schedule;
use super::state::{EstimatorErrors, MomentumState, SolverState};

/// `(1 - beta) a + beta b`.
fn smooth(a: &DVector<f64>, b: &DVector<f64>, beta: f64) -> DVector<f64> {
    a * (1.0 - beta) + b * beta
}

/// `sigma f_x + g_xy - g_xz`.
fn x_direction(sigma: f64, fx: &DVector<f64>, gxy: &DVector<f64>, gxz: &DVector<f64>) -> DVector<f64> {
    fx * sigma + gxy - gxz
}

/// Double-loop iteration: `T_k` projected prox steps for `w_y` and `w_z`,
/// proximal smoothing of `y` and `z`, then a projected `x` step with an
/// `M_k`-sample batch.
pub fn double_loop_step(
    problem: &BilevelProblem,
    state: &SolverState,
    schedule: &Schedule,
    oracle: &Oracle,
    run_seed: u64,
) -> Result<SolverState> {
    let k = state.k;
    schedule.check_step(k)?;
    let s = schedule.at(k);
    let rho = schedule.rho;
    let x = &state.x;
    let mut calls = state.oracle_calls;

    let mut u = state.w_y.clone();
    let mut v = state.w_z.clone();
    for t in 0..s.t as u64 {
        let seed = SeedPath::new(run_seed, Stream::Wy, k, t);
        let fy = oracle.grad_f(problem, x, &u, seed).1;
        let gy = oracle.grad_g(problem, x, &u, seed).1;
        let gz = oracle.grad_g(problem, x, &v, SeedPath::new(run_seed, Stream::Wz, k, t)).1;
        u = projected_step(&problem.domain_y, &u, &state.y, &combine(s.sigma, &fy, gy), s.gamma, rho)?;
        v = projected_step(&problem.domain_y, &v, &state.z, &gz, s.gamma, rho)?;
    }
    calls.add(Stream::Wy, 2 * s.t as u64);
    calls.add(Stream::Wz, s.t as u64);

    let y = smooth(&state.y, &u, s.beta);
    let z = smooth(&state.z, &v, s.beta);

    let mut sum: Option<DVector<f64>> = None;
    for m in 0..s.m as u64 {
        let fx = oracle.grad_f(problem, x, &u, SeedPath::new(run_seed, Stream::XF, k, m)).0;
        let gxy = oracle.grad_g(problem, x, &u, SeedPath::new(run_seed, Stream::XGy, k, m)).0;
        let gxz = oracle.grad_g(problem, x, &v, SeedPath::new(run_seed, Stream::XGz, k, m)).0;
        let term = x_direction(s.sigma, &fx, &gxy, &gxz);
        sum = Some(match sum {
            None => term,
            Some(acc) => acc + term,
        });
    }
    for stream in [Stream::XF, Stream::XGy, Stream::XGz] {
        calls.add(stream, s.m as u64);
    }
    let dir = sum.expect("batch size is at least one") * (s.alpha / s.m as f64);
    let x_next = problem.domain_x.project_vec(&(x - dir))?;

    let next = SolverState {
        k: k + 1,
        x: x_next,
        y,
        z,
        w_y: u,
        w_z: v,
        momentum: None,
        estimator_errors: None,
        sigma_k: schedule.sigma(k + 1),
        oracle_calls: calls,
    };
    next.ensure_finite()?;
    Ok(next)
}

/// `fresh + (1 - eta) (previous - paired)`.
fn recurse(fresh: DVector<f64>, previous: &DVector<f64>, paired: DVector<f64>, eta: f64) -> DVector<f64> {
    fresh + (previous - paired) * (1.0 - eta)
}

/// Single-loop iteration with momentum-assisted estimators.
///
/// Each estimator combines a fresh sample at the current point with the
/// previous estimate, corrected by a sample at the previous point under the
/// same seed. The correction is skipped when `eta_k = 1`.
pub fn single_loop_step(
    problem: &BilevelProblem,
    state: &SolverState,
    schedule: &Schedule,
    oracle: &Oracle,
    run_seed: u64,
) -> Result<SolverState> {
    oracle.require_smooth()?;
    let k = state.k;
    schedule.check_step(k)?;
    let s = schedule.at(k);
    let rho = schedule.rho;
    let x = &state.x;
    let mut calls = state.oracle_calls;
    let prev = state.momentum.as_ref().filter(|_| s.eta < 1.0);

    let seed_wy = SeedPath::new(run_seed, Stream::Wy, k, 0);
    let seed_wz = SeedPath::new(run_seed, Stream::Wz, k, 0);
    let mut f_wy = oracle.grad_f(problem, x, &state.w_y, seed_wy).1;
    let mut g_wy = oracle.grad_g(problem, x, &state.w_y, seed_wy).1;
    let mut g_wz = oracle.grad_g(problem, x, &state.w_z, seed_wz).1;
    calls.add(Stream::Wy, 2);
    calls.add(Stream::Wz, 1);
    if let Some(m) = prev {
        let old_f = oracle.grad_f(problem, &m.prev_x, &m.prev_wy, seed_wy).1;
        let old_g = oracle.grad_g(problem, &m.prev_x, &m.prev_wy, seed_wy).1;
        let old_gz = oracle.grad_g(problem, &m.prev_x, &m.prev_wz, seed_wz).1;
        f_wy = recurse(f_wy, &m.f_wy, old_f, s.eta);
        g_wy = recurse(g_wy, &m.g_wy, old_g, s.eta);
        g_wz = recurse(g_wz, &m.g_wz, old_gz, s.eta);
        calls.add(Stream::Wy, 2);
        calls.add(Stream::Wz, 1);
    }

    let w_y = projected_step(
        &problem.domain_y,
        &state.w_y,
        &state.y,
        &combine(s.sigma, &f_wy, g_wy.clone()),
        s.gamma,
        rho,
    )?;
    let w_z = projected_step(&problem.domain_y, &state.w_z, &state.z, &g_wz, s.gamma, rho)?;
    let y = smooth(&state.y, &w_y, s.beta);
    let z = smooth(&state.z, &w_z, s.beta);

    let seed_xf = SeedPath::new(run_seed, Stream::XF, k, 0);
    let seed_xgy = SeedPath::new(run_seed, Stream::XGy, k, 0);
    let seed_xgz = SeedPath::new(run_seed, Stream::XGz, k, 0);
    let mut f_x = oracle.grad_f(problem, x, &w_y, seed_xf).0;
    let mut g_xy = oracle.grad_g(problem, x, &w_y, seed_xgy).0;
    let mut g_xz = oracle.grad_g(problem, x, &w_z, seed_xgz).0;
    for stream in [Stream::XF, Stream::XGy, Stream::XGz] {
        calls.add(stream, 1);
    }
    if let Some(m) = prev {
        // The previous x-estimators were taken at (x_{k-1}, w_k).
        let old_f = oracle.grad_f(problem, &m.prev_x, &state.w_y, seed_xf).0;
        let old_gy = oracle.grad_g(problem, &m.prev_x, &state.w_y, seed_xgy).0;
        let old_gz = oracle.grad_g(problem, &m.prev_x, &state.w_z, seed_xgz).0;
        f_x = recurse(f_x, &m.f_x, old_f, s.eta);
        g_xy = recurse(g_xy, &m.g_xy, old_gy, s.eta);
        g_xz = recurse(g_xz, &m.g_xz, old_gz, s.eta);
        for stream in [Stream::XF, Stream::XGy, Stream::XGz] {
            calls.add(stream, 1);
        }
    }
    let dir = x_direction(s.sigma, &f_x, &g_xy, &g_xz) * s.alpha;
    let x_next = problem.domain_x.project_vec(&(x - dir))?;

    let errors = {
        let exact_wy = problem.h_gradient(x, &state.w_y, s.sigma).1;
        let exact_wz = problem.g.gradient(x, &state.w_z).1;
        let exact_x = problem.h_gradient(x, &w_y, s.sigma).0 - problem.g.gradient(x, &w_z).0;
        EstimatorErrors {
            x: (x_direction(s.sigma, &f_x, &g_xy, &g_xz) - exact_x).norm_squared(),
            wy: (combine(s.sigma, &f_wy, g_wy.clone()) - exact_wy).norm_squared(),
            wz: (&g_wz - exact_wz).norm_squared(),
        }
    };

    let next = SolverState {
        k: k + 1,
        x: x_next,
        y,
        z,
        momentum: Some(MomentumState {
            f_wy,
            g_wy,
            g_wz,
            f_x,
            g_xy,
            g_xz,
            prev_x: state.x.clone(),
            prev_wy: state.w_y.clone(),
            prev_wz: state.w_z.clone(),
        }),
        w_y,
        w_z,
        estimator_errors: Some(errors),
        sigma_k: schedule.sigma(k + 1),
        oracle_calls: calls,
    };
    next.ensure_finite()?;
    Ok(next)
}
