//! Inexact proximal operators of `h_sigma(x, .)` over `Y` and the associated
//! Moreau envelopes.
//!
//! `prox_{rho h}(anchor) = argmin_{w in Y} h(x, w) + ||w - anchor||^2 / (2 rho)`
//! is approximated by projected gradient descent, the same step both solvers
//! use in their lower-level updates.

use nalgebra::DVector;

use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::oracle::{Oracle, SeedPath};
use crate::problem::BilevelProblem;

/// Step cap of a high-accuracy solve.
pub const HIGH_ACCURACY_STEPS: usize = 1_000_000;
/// Residual target of a high-accuracy solve.
pub const HIGH_ACCURACY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ProxSpec {
    pub rho: f64,
    pub sigma: f64,
    pub anchor: DVector<f64>,
    pub inner_steps: usize,
    pub inner_step_size: f64,
    /// Early exit once the gradient-mapping norm drops to this level;
    /// zero disables early exit.
    pub tolerance: f64,
}

impl ProxSpec {
    pub fn new(
        rho: f64,
        sigma: f64,
        anchor: DVector<f64>,
        inner_steps: usize,
        inner_step_size: f64,
        tolerance: f64,
    ) -> Result<Self> {
        let spec = ProxSpec {
            rho,
            sigma,
            anchor,
            inner_steps,
            inner_step_size,
            tolerance,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A spec that drives the solve to [`HIGH_ACCURACY_TOL`], with a step size
    /// derived from the declared smoothness of `h_sigma`.
    pub fn high_accuracy(problem: &BilevelProblem, rho: f64, sigma: f64, anchor: DVector<f64>) -> Result<Self> {
        let gamma = default_step(problem, rho, sigma);
        Self::new(rho, sigma, anchor, HIGH_ACCURACY_STEPS, gamma, HIGH_ACCURACY_TOL)
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if self.inner_steps == 0 {
            return Err(Error::config("inner_steps must be positive"));
        }
        if !(self.inner_step_size > 0.0) {
            return Err(Error::config("inner step size must be positive"));
        }
        if self.inner_step_size >= self.rho {
            return Err(Error::config(format!(
                "inner step size {} must be smaller than rho {}",
                self.inner_step_size, self.rho
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("tolerance must be nonnegative"));
        }
        if self.anchor.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite prox anchor", f64::NAN));
        }
        Ok(())
    }

    /// Logs warnings when the spec leaves the analyzed parameter regime.
    pub fn check_constants(&self, problem: &BilevelProblem) {
        check_rho(problem, self.rho, self.sigma)
    }
}

/// Warns when `rho` leaves the `rho l_g1 < 1/4` regime, or when the
/// subproblem may lose strong convexity for a nonconvex `h_sigma`.
pub fn check_rho(problem: &BilevelProblem, rho: f64, sigma: f64) {
    if let Some(lh) = problem.h_smoothness(sigma) {
        if rho * lh >= 1.0 {
            log::warn!("rho = {rho} exceeds 1 / L_h = {:.3e}; the prox subproblem needs a convex h_sigma", 1.0 / lh);
        }
    }
    if let Some(lg) = problem.constants.l_g1 {
        if rho * lg >= 0.25 {
            log::warn!("rho * l_g1 = {:.3} is outside the rho < 1/(4 l_g1) regime", rho * lg);
        }
        if let Some(lf) = problem.constants.l_f1 {
            if sigma * lf >= lg {
                log::warn!("sigma * l_f1 = {:.3} exceeds l_g1 = {lg}", sigma * lf);
            }
        }
    }
}

/// `1 / (L_h + 1/rho)` when the smoothness of `h_sigma` is declared,
/// otherwise `rho / 2`.
pub fn default_step(problem: &BilevelProblem, rho: f64, sigma: f64) -> f64 {
    match problem.h_smoothness(sigma) {
        Some(lh) => 1.0 / (lh + 1.0 / rho),
        None => 0.5 * rho,
    }
}

/// `sigma * f_y + g_y`, the lower-level direction of `h_sigma`.
pub(crate) fn combine(sigma: f64, fy: &DVector<f64>, gy: DVector<f64>) -> DVector<f64> {
    fy * sigma + gy
}

/// One projected step `Pi_Y[u - gamma (grad + (u - anchor) / rho)]`.
pub fn projected_step(
    domain: &ConvexDomain,
    u: &DVector<f64>,
    anchor: &DVector<f64>,
    grad: &DVector<f64>,
    gamma: f64,
    rho: f64,
) -> Result<DVector<f64>> {
    let drift = (u - anchor) / rho;
    let next = u - (grad + drift) * gamma;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite prox iterate", f64::NAN));
    }
    domain.project_vec(&next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxOutcome {
    pub w: DVector<f64>,
    /// `||w - next(w)|| / gamma` with exact gradients.
    pub residual: f64,
    pub steps_used: usize,
    /// Gradient evaluations charged to the oracle.
    pub oracle_calls: u64,
}

/// Exact gradient in `y` of `h_sigma`.
fn exact_grad_y(problem: &BilevelProblem, x: &DVector<f64>, w: &DVector<f64>, sigma: f64) -> DVector<f64> {
    let (_, gy) = problem.g.gradient(x, w);
    if sigma == 0.0 {
        return gy;
    }
    let (_, fy) = problem.f.gradient(x, w);
    combine(sigma, &fy, gy)
}

/// Runs up to `spec.inner_steps` projected gradient steps from `start`.
///
/// With an oracle, step `t` uses samples keyed by `seed` with inner index
/// `t`; `f` is only sampled when `sigma > 0`.
pub fn prox_solve(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    spec: &ProxSpec,
    start: &DVector<f64>,
    oracle: Option<(&Oracle, SeedPath)>,
) -> Result<ProxOutcome> {
    spec.validate()?;
    problem.check_feasible(x, start)?;
    if spec.anchor.len() != problem.dim_y() {
        return Err(Error::argument("prox anchor has the wrong dimension"));
    }
    let (gamma, rho) = (spec.inner_step_size, spec.rho);
    let mut u = start.clone();
    let mut calls = 0u64;
    let mut steps = 0;
    while steps < spec.inner_steps {
        let grad = match oracle {
            Some((o, seed)) => {
                let seed = SeedPath { inner: steps as u64, ..seed };
                let (_, gy) = o.grad_g(problem, x, &u, seed);
                calls += 1;
                if spec.sigma == 0.0 {
                    gy
                } else {
                    let (_, fy) = o.grad_f(problem, x, &u, seed);
                    calls += 1;
                    combine(spec.sigma, &fy, gy)
                }
            }
            None => exact_grad_y(problem, x, &u, spec.sigma),
        };
        let next = projected_step(&problem.domain_y, &u, &spec.anchor, &grad, gamma, rho)?;
        let moved = (&next - &u).norm() / gamma;
        u = next;
        steps += 1;
        if spec.tolerance > 0.0 && moved <= spec.tolerance {
            break;
        }
    }
    let grad = exact_grad_y(problem, x, &u, spec.sigma);
    let probe = projected_step(&problem.domain_y, &u, &spec.anchor, &grad, gamma, rho)?;
    let residual = (&probe - &u).norm() / gamma;
    Ok(ProxOutcome {
        w: u,
        residual,
        steps_used: steps,
        oracle_calls: calls,
    })
}

/// High-accuracy prox point of `h_sigma(x, .)` at `anchor`.
pub fn prox_point(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    sigma: f64,
    rho: f64,
    anchor: &DVector<f64>,
) -> Result<DVector<f64>> {
    let spec = ProxSpec::high_accuracy(problem, rho, sigma, anchor.clone())?;
    high_accuracy_solve(problem, x, &spec)
}

fn high_accuracy_solve(problem: &BilevelProblem, x: &DVector<f64>, spec: &ProxSpec) -> Result<DVector<f64>> {
    let start = problem.domain_y.project_vec(&spec.anchor)?;
    let out = prox_solve(problem, x, spec, &start, None)?;
    // Rounding can stall the gradient mapping slightly above the target.
    if out.residual > 1e-8 * (1.0 + spec.anchor.amax()) {
        return Err(Error::numerical("prox solve did not reach the requested accuracy", out.residual));
    }
    Ok(out.w)
}

/// Moreau envelope `min_w h_sigma(x, w) + ||w - anchor||^2 / (2 rho)`.
///
/// With `high_accuracy` the spec's step count and tolerance are replaced by
/// the high-accuracy settings.
pub fn envelope_value(problem: &BilevelProblem, x: &DVector<f64>, spec: &ProxSpec, high_accuracy: bool) -> Result<f64> {
    let w = if high_accuracy {
        let precise = ProxSpec {
            inner_steps: HIGH_ACCURACY_STEPS,
            tolerance: HIGH_ACCURACY_TOL,
            ..spec.clone()
        };
        high_accuracy_solve(problem, x, &precise)?
    } else {
        let start = problem.domain_y.project_vec(&spec.anchor)?;
        prox_solve(problem, x, spec, &start, None)?.w
    };
    Ok(envelope_at(problem, x, spec.sigma, spec.rho, &spec.anchor, &w))
}

pub(crate) fn envelope_at(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    sigma: f64,
    rho: f64,
    anchor: &DVector<f64>,
    w: &DVector<f64>,
) -> f64 {
    problem.h_value(x, w, sigma) + (w - anchor).norm_squared() / (2.0 * rho)
}

/// `(grad_x, grad_y)` of the envelope: `grad_x h_sigma(x, w*)` and
/// `(anchor - w*) / rho`, with `w*` solved to high accuracy.
pub fn envelope_gradient(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    spec: &ProxSpec,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let precise = ProxSpec {
        inner_steps: HIGH_ACCURACY_STEPS,
        tolerance: HIGH_ACCURACY_TOL,
        ..spec.clone()
    };
    let w = high_accuracy_solve(problem, x, &precise)?;
    let (gx, _) = problem.h_gradient(x, &w, spec.sigma);
    Ok((gx, (&spec.anchor - &w) / spec.rho))
}
