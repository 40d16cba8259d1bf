//! Hyper-objective evaluation: `psi`, the penalized `psi_sigma`, finite
//! differences, the implicit-gradient formula with a pseudo-inverse
//! Lagrangian Hessian, and regularity diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{BilevelProblem, SolutionSet};
use crate::prox;
use crate::testbed;

/// Relative eigenvalue cutoff of the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-8;
/// Slack for active-set detection.
pub const ACTIVE_TOL: f64 = 1e-7;
/// Largest least-squares residual accepted for the KKT multipliers.
pub const KKT_RESIDUAL_TOL: f64 = 1e-6;
/// Violation threshold of the image condition.
pub const IMAGE_TOL: f64 = 1e-6;

const MULTI_STARTS: usize = 8;
const MAX_ITERS: usize = 500_000;

/// How inner minimizations are carried out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Accuracy {
    /// Multi-start accelerated projected gradient to the given
    /// gradient-mapping tolerance.
    Solver { tol: f64 },
    /// Closed-form hooks when the problem carries them, else the solver at
    /// high accuracy.
    ClosedForm,
}

impl Accuracy {
    pub fn high() -> Self {
        Accuracy::Solver { tol: 1e-12 }
    }
}

/// Result of one local solve.
struct LocalMin {
    y: DVector<f64>,
    value: f64,
}

/// Gradient-mapping norm `L ||y - Pi_Y[y - grad / L]||`.
fn mapping_norm(problem: &BilevelProblem, y: &DVector<f64>, grad: &DVector<f64>, l: f64) -> Result<f64> {
    let p = problem.domain_y.project_vec(&(y - grad / l))?;
    Ok((y - p).norm() * l)
}

/// Accelerated projected gradient with backtracking and adaptive restart on
/// `h_sigma(x, .)` over `Y`.
fn local_minimize(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, start: DVector<f64>, tol: f64) -> Result<LocalMin> {
    let h = |y: &DVector<f64>| problem.h_value(x, y, sigma);
    let grad = |y: &DVector<f64>| problem.h_gradient(x, y, sigma).1;
    let mut l = problem.h_smoothness(sigma).unwrap_or(1.0).max(1e-6);
    let mut cur = problem.domain_y.project_vec(&start)?;
    let mut cur_val = h(&cur);
    let mut mom = cur.clone();
    let mut theta = 1.0f64;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let gm = grad(&mom);
        let hm = h(&mom);
        let next = loop {
            let cand = problem.domain_y.project_vec(&(&mom - &gm / l))?;
            let d = &cand - &mom;
            let model = hm + gm.dot(&d) + 0.5 * l * d.norm_squared();
            let hc = h(&cand);
            // Near the minimizer the value test drowns in rounding; the
            // gradient test does not.
            let lipschitz = (grad(&cand) - &gm).norm() <= l * d.norm();
            if hc <= model + 1e-15 * (1.0 + hm.abs()) || lipschitz || l > 1e16 {
                break (cand, hc);
            }
            l *= 2.0;
        };
        let (cand, cand_val) = next;
        if !cand_val.is_finite() {
            return Err(Error::numerical("non-finite value in lower-level solve", cand_val));
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let stepped = &cand - &cur;
        if (&mom - &cand).dot(&stepped) > 0.0 {
            // Momentum points uphill: drop it.
            mom = cand.clone();
            theta = 1.0;
        } else {
            mom = &cand + stepped * ((theta - 1.0) / theta_next);
            theta = theta_next;
        }
        cur = cand;
        cur_val = cand_val;
        residual = mapping_norm(problem, &cur, &grad(&cur), l)?;
        if residual <= tol {
            return Ok(LocalMin { y: cur, value: cur_val });
        }
    }
    if residual <= 1e-8 {
        log::debug!("lower-level solve stalled at residual {residual:e}");
        return Ok(LocalMin { y: cur, value: cur_val });
    }
    Err(Error::numerical("lower-level solve did not converge", residual))
}

fn starts(problem: &BilevelProblem, x: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = problem.dim_y();
    let (lo, hi) = problem
        .domain_y
        .bounding_box()
        .unwrap_or_else(|| (DVector::from_element(d, -2.0), DVector::from_element(d, 2.0)));
    let mut out = vec![(&lo + &hi) * 0.5];
    for mask in 0..(1usize << d.min(2)) {
        out.push(DVector::from_fn(d, |i, _| if (mask >> i) & 1 == 1 { hi[i] } else { lo[i] }));
    }
    // Seeded by x so that repeated evaluations agree.
    let seed = x.iter().fold(0x9e37_79b9_7f4a_7c15u64, |acc, v| acc.rotate_left(7) ^ v.to_bits());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < MULTI_STARTS {
        out.push(DVector::from_fn(d, |i, _| rng.random_range(lo[i]..=hi[i])));
    }
    out
}

/// Global minimizers of `h_sigma(x, .)` found by multi-start: returns
/// `l(x, sigma)` and the distinct minimizers.
pub fn lower_minimize(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, tol: f64) -> Result<(f64, Vec<DVector<f64>>)> {
    if x.len() != problem.dim_x() {
        return Err(Error::argument("x has the wrong dimension"));
    }
    let runs = starts(problem, x)
        .into_iter()
        .map(|s| local_minimize(problem, x, sigma, s, tol))
        .collect::<Result<Vec<_>>>()?;
    let best = runs.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let slack = 1e-9 * (1.0 + best.abs());
    let mut minimizers: Vec<DVector<f64>> = Vec::new();
    for r in runs.into_iter().filter(|r| r.value <= best + slack) {
        if minimizers.iter().all(|m| (m - &r.y).norm() > 1e-6) {
            minimizers.push(r.y);
        }
    }
    Ok((best, minimizers))
}

/// `l(x, sigma) = min_Y h_sigma(x, .)`.
pub fn value_function(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, accuracy: Accuracy) -> Result<f64> {
    match (accuracy, &problem.closed_form) {
        (Accuracy::ClosedForm, Some(cf)) => {
            let y = cf.solution_set(x, sigma).representative();
            Ok(problem.h_value(x, &y, sigma))
        }
        (Accuracy::ClosedForm, None) => Ok(lower_minimize(problem, x, sigma, 1e-12)?.0),
        (Accuracy::Solver { tol }, _) => Ok(lower_minimize(problem, x, sigma, tol)?.0),
    }
}

/// `psi_sigma(x) = (l(x, sigma) - l(x, 0)) / sigma`.
pub fn eval_psi_sigma(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, accuracy: Accuracy) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::argument(format!("psi_sigma needs sigma > 0, got {sigma}")));
    }
    let with = value_function(problem, x, sigma, accuracy)?;
    let without = value_function(problem, x, 0.0, accuracy)?;
    Ok((with - without) / sigma)
}

/// How `psi` is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsiMethod {
    /// Closed-form solution set when available, else the grid oracle.
    Auto,
    ClosedForm,
    Grid,
}

/// `psi(x) = min_{y in S(x)} f(x, y)`.
pub fn eval_psi(problem: &BilevelProblem, x: &DVector<f64>) -> Result<f64> {
    Ok(psi_minimizer(problem, x, PsiMethod::Auto)?.0)
}

pub fn eval_psi_with(problem: &BilevelProblem, x: &DVector<f64>, method: PsiMethod) -> Result<f64> {
    Ok(psi_minimizer(problem, x, method)?.0)
}

/// `psi(x)` together with the minimizer of `f` over the lower-level
/// solution set.
pub fn psi_minimizer(problem: &BilevelProblem, x: &DVector<f64>, method: PsiMethod) -> Result<(f64, DVector<f64>)> {
    let closed = problem.closed_form.as_ref();
    let grid_ok = problem.dim_y() <= 3 && problem.domain_y.is_bounded();
    match method {
        PsiMethod::ClosedForm | PsiMethod::Auto if closed.is_some() => {
            let set = closed.expect("checked above").solution_set(x, 0.0);
            Ok(minimize_over_set(problem, x, &set))
        }
        PsiMethod::Grid | PsiMethod::Auto if grid_ok => {
            let res = testbed::default_grid_resolution(problem.dim_y());
            let grid = testbed::grid_oracle(problem, x, 0.0, res)?;
            grid.argmin_set
                .into_iter()
                .map(|y| (problem.f.value(x, &y), y))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .ok_or_else(|| Error::numerical("grid oracle returned no minimizer", f64::NAN))
        }
        _ => Err(Error::unsupported(
            "psi needs a closed-form solution set or a bounded lower level with d_y <= 3",
        )),
    }
}

/// Minimizes `f(x, .)` over a parametric solution set, assuming `f` is
/// unimodal along it. The directional derivative is bisected for its sign
/// change.
fn minimize_over_set(problem: &BilevelProblem, x: &DVector<f64>, set: &SolutionSet) -> (f64, DVector<f64>) {
    let (point, direction, bounded) = match set {
        SolutionSet::Point(p) => return (problem.f.value(x, p), p.clone()),
        SolutionSet::Segment(a, b) => (a.clone(), b - a, true),
        SolutionSet::Line { point, direction } => (point.clone(), direction.clone(), false),
    };
    let at = |t: f64| &point + &direction * t;
    let slope = |t: f64| problem.f.gradient(x, &at(t)).1.dot(&direction);
    let (mut lo, mut hi) = if bounded {
        (0.0, 1.0)
    } else {
        let mut r = 1.0;
        while r < 1e12 && (slope(-r) >= 0.0 || slope(r) <= 0.0) {
            r *= 2.0;
        }
        (-r, r)
    };
    let t = if slope(lo) >= 0.0 {
        lo
    } else if slope(hi) <= 0.0 {
        hi
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let y = at(t);
    (problem.f.value(x, &y), y)
}

/// Central differences of `psi_sigma` with per-coordinate step `h`,
/// one-sided where `x +- h` leaves `X`.
pub fn grad_psi_sigma_fd(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, h: f64) -> Result<DVector<f64>> {
    grad_psi_sigma_fd_with(problem, x, sigma, h, Accuracy::high())
}

pub fn grad_psi_sigma_fd_with(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    sigma: f64,
    h: f64,
    accuracy: Accuracy,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::argument("finite-difference step must be positive"));
    }
    let inside = |p: &DVector<f64>| problem.domain_x.contains(p, 0.0);
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let value = |p: &DVector<f64>| eval_psi_sigma(problem, p, sigma, accuracy);
        grad[i] = match (inside(&plus), inside(&minus)) {
            (true, true) => (value(&plus)? - value(&minus)?) / (2.0 * h),
            (true, false) => (value(&plus)? - value(x)?) / h,
            (false, true) => (value(x)? - value(&minus)?) / h,
            (false, false) => return Err(Error::argument("finite-difference step exceeds the domain")),
        };
    }
    Ok(grad)
}

/// KKT data of the lower-level problem at a solution `y*`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianSnapshot {
    pub y_star: DVector<f64>,
    /// Indices into `domain_y.inequality_constraints()`.
    pub active_set: Vec<usize>,
    pub multipliers_ineq: DVector<f64>,
    pub multipliers_eq: DVector<f64>,
    /// Symmetric matrix over `(lambda_I, nu, y)`.
    pub lagrangian_hessian: DMatrix<f64>,
    /// Smallest singular value of the stacked active gradients; `+inf`
    /// when nothing is active.
    pub s_min: f64,
    pub strict_complementarity: bool,
    pub stationarity_residual: f64,
}

impl LagrangianSnapshot {
    pub fn licq(&self) -> bool {
        self.s_min > 0.0
    }

    fn constraint_rows(&self) -> usize {
        self.multipliers_ineq.len() + self.multipliers_eq.len()
    }
}

pub fn find_lagrangian_snapshot(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    sigma: f64,
    y_star: &DVector<f64>,
    active_tol: f64,
) -> Result<LagrangianSnapshot> {
    problem.check_feasible(x, y_star)?;
    let dy = problem.dim_y();
    let ineq = problem.domain_y.inequality_constraints();
    let eq = problem.domain_y.equality_constraints();
    let active: Vec<usize> = (0..ineq.len())
        .filter(|&i| ineq[i].value(y_star) >= -active_tol)
        .collect();
    let (ni, ne) = (active.len(), eq.len());
    let m = ni + ne;
    // Rows are constraint gradients: J = [J_I; J_E].
    let mut jac = DMatrix::zeros(m, dy);
    for (r, &i) in active.iter().enumerate() {
        jac.row_mut(r).copy_from(&ineq[i].gradient(y_star).transpose());
    }
    for (r, c) in eq.iter().enumerate() {
        jac.row_mut(ni + r).copy_from(&c.normal.transpose());
    }
    let (_, gy) = problem.h_gradient(x, y_star, sigma);
    let (mult, residual) = if m == 0 {
        (DVector::zeros(0), gy.norm())
    } else {
        let jt = jac.transpose();
        let svd = jt.clone().svd(true, true);
        let mult = svd
            .solve(&(-&gy), 1e-12 * svd.singular_values.max())
            .map_err(|e| Error::numerical(format!("KKT least squares failed: {e}"), f64::NAN))?;
        let residual = (&jt * &mult + &gy).norm();
        (mult, residual)
    };
    if residual > KKT_RESIDUAL_TOL {
        return Err(Error::KktInconsistent { residual });
    }
    let s_min = if m == 0 {
        f64::INFINITY
    } else {
        let sv = jac.clone().svd(false, false).singular_values;
        // The stacked gradients have rank at most min(m, d_y).
        if m > dy {
            0.0
        } else {
            sv.min()
        }
    };
    let lambda = mult.rows(0, ni).into_owned();
    let nu = mult.rows(ni, ne).into_owned();

    let hyy = hess_yy(problem, x, y_star, sigma)?;
    let mut lyy = hyy;
    for (r, &i) in active.iter().enumerate() {
        lyy += ineq[i].hessian(y_star) * lambda[r];
    }
    let n = m + dy;
    let mut hess = DMatrix::zeros(n, n);
    hess.view_mut((0, m), (m, dy)).copy_from(&jac);
    hess.view_mut((m, 0), (dy, m)).copy_from(&jac.transpose());
    hess.view_mut((m, m), (dy, dy)).copy_from(&lyy);
    let strict = lambda.iter().all(|&l| l > active_tol);
    Ok(LagrangianSnapshot {
        y_star: y_star.clone(),
        active_set: active,
        multipliers_ineq: lambda,
        multipliers_eq: nu,
        lagrangian_hessian: hess,
        s_min,
        strict_complementarity: strict,
        stationarity_residual: residual,
    })
}

fn hess_yy(problem: &BilevelProblem, x: &DVector<f64>, y: &DVector<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    let g = problem
        .g
        .hess_yy(x, y)
        .ok_or_else(|| Error::unsupported("lower objective has no second derivatives"))?;
    if sigma == 0.0 {
        return Ok(g);
    }
    let f = problem
        .f
        .hess_yy(x, y)
        .ok_or_else(|| Error::unsupported("upper objective has no second derivatives"))?;
    Ok(f * sigma + g)
}

/// Mixed block `d^2 h_sigma / (dx dy)`, `d_x x d_y`.
fn hess_xy(problem: &BilevelProblem, x: &DVector<f64>, y: &DVector<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    let g = problem
        .g
        .hess_xy(x, y)
        .ok_or_else(|| Error::unsupported("lower objective has no second derivatives"))?;
    if sigma == 0.0 {
        return Ok(g);
    }
    let f = problem
        .f
        .hess_xy(x, y)
        .ok_or_else(|| Error::unsupported("upper objective has no second derivatives"))?;
    Ok(f * sigma + g)
}

/// Eigen-cutoff pseudo-inverse of a symmetric matrix and the orthonormal
/// basis of its image.
fn pinv_symmetric(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite Lagrangian Hessian", f64::NAN));
    }
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.amax();
    let cutoff = PINV_CUTOFF * top;
    let mut pinv = DMatrix::zeros(n, n);
    let mut image = Vec::new();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if top > 0.0 && lam.abs() > cutoff {
            let u = eig.eigenvectors.column(i);
            pinv += u * u.transpose() / lam;
            image.push(u.into_owned());
        }
    }
    let basis = if image.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&image)
    };
    Ok((pinv, basis))
}

/// `grad_x f - [0, d^2 h / dx dy] (d^2 L_I)^+ [0; grad_y f]` at the
/// snapshot's solution.
pub fn implicit_gradient(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    sigma: f64,
    snapshot: &LagrangianSnapshot,
) -> Result<DVector<f64>> {
    let y = &snapshot.y_star;
    let (fx, fy) = problem.f.gradient(x, y);
    let hxy = hess_xy(problem, x, y, sigma)?;
    let m = snapshot.constraint_rows();
    let (pinv, _) = pinv_symmetric(&snapshot.lagrangian_hessian)?;
    let mut rhs = DVector::zeros(m + y.len());
    rhs.rows_mut(m, y.len()).copy_from(&fy);
    let sol = pinv * rhs;
    Ok(fx - hxy * sol.rows(m, y.len()))
}

/// Checks that every direction of `span(Im(d^2 h / dy dx), grad_y f)` lies
/// in the image of the Lagrangian Hessian. Returns `(holds, worst violation)`.
pub fn image_condition_check(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    sigma: f64,
    snapshot: &LagrangianSnapshot,
) -> Result<(bool, f64)> {
    let y = &snapshot.y_star;
    let dy = y.len();
    let (_, fy) = problem.f.gradient(x, y);
    let hyx = hess_xy(problem, x, y, sigma)?.transpose();
    let mut cols: Vec<DVector<f64>> = hyx.column_iter().map(|c| c.into_owned()).collect();
    cols.push(fy);
    let stacked = DMatrix::from_columns(&cols);
    let svd = stacked.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::numerical("SVD failed", f64::NAN))?;
    let top = svd.singular_values.max();
    let m = snapshot.constraint_rows();
    let (_, image) = pinv_symmetric(&snapshot.lagrangian_hessian)?;
    let mut worst: f64 = 0.0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if top == 0.0 || s <= 1e-12 * top {
            continue;
        }
        let mut v = DVector::zeros(m + dy);
        v.rows_mut(m, dy).copy_from(&u.column(i));
        let along = &image * (image.transpose() * &v);
        worst = worst.max((v - along).norm());
    }
    Ok((worst <= IMAGE_TOL, worst))
}

/// One proximal error-bound probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EbProbe {
    pub prox_residual: f64,
    pub distance: f64,
    /// `prox_residual / distance`, `+inf` on the solution set.
    pub ratio: f64,
}

pub fn eb_ratio(
    problem: &BilevelProblem,
    x: &DVector<f64>,
    sigma: f64,
    probes: &[DVector<f64>],
    rho: f64,
) -> Result<Vec<EbProbe>> {
    let hooks = problem
        .closed_form
        .as_ref()
        .ok_or_else(|| Error::unsupported("error-bound probes need a solution-set hook"))?;
    let set = hooks.solution_set(x, sigma);
    probes
        .iter()
        .map(|y| {
            let w = prox::prox_point(problem, x, sigma, rho, y)?;
            let prox_residual = (y - w).norm() / rho;
            let distance = set.distance(y);
            let ratio = if distance <= 1e-12 {
                f64::INFINITY
            } else {
                prox_residual / distance
            };
            Ok(EbProbe {
                prox_residual,
                distance,
                ratio,
            })
        })
        .collect()
}

/// One evaluated point of a landscape sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeSample {
    pub x: DVector<f64>,
    pub sigma: f64,
    pub psi_sigma: f64,
    pub psi: Option<f64>,
    pub grad_fd: Option<DVector<f64>>,
    pub grad_formula: Option<DVector<f64>>,
    pub diagnostics: Option<LagrangianSnapshot>,
}

/// Evaluates `psi_sigma`, `psi`, the finite-difference gradient and the
/// formula gradient at one point. `psi` is left out when unsupported and the
/// formula when the KKT data is unavailable.
pub fn sample(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, fd_step: f64, accuracy: Accuracy) -> Result<LandscapeSample> {
    let psi_sigma = eval_psi_sigma(problem, x, sigma, accuracy)?;
    let psi = match eval_psi(problem, x) {
        Ok(v) => Some(v),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    let grad_fd = Some(grad_psi_sigma_fd_with(problem, x, sigma, fd_step, accuracy)?);
    let (_, minimizers) = lower_minimize(problem, x, sigma, 1e-12)?;
    let mut formulas = Vec::new();
    let mut diagnostics = None;
    for y in &minimizers {
        match find_lagrangian_snapshot(problem, x, sigma, y, ACTIVE_TOL)
            .and_then(|s| implicit_gradient(problem, x, sigma, &s).map(|g| (s, g)))
        {
            Ok((s, g)) => {
                diagnostics.get_or_insert(s);
                formulas.push(g);
            }
            Err(Error::KktInconsistent { .. } | Error::Unsupported(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if formulas.len() > 1 && formulas.iter().any(|g| (g - &formulas[0]).norm() > 1e-6) {
        log::warn!("lower-level minimizers at x = {} give different formula gradients", x.transpose());
    }
    Ok(LandscapeSample {
        x: x.clone(),
        sigma,
        psi_sigma,
        psi,
        grad_fd,
        grad_formula: formulas.into_iter().next(),
        diagnostics,
    })
}

/// Evaluates [`sample`] over all `(x, sigma)` pairs in parallel; output
/// order is `sigma`-major, then `x`.
pub fn sweep(
    problem: &BilevelProblem,
    xs: &[DVector<f64>],
    sigmas: &[f64],
    fd_step: f64,
    accuracy: Accuracy,
) -> Result<Vec<LandscapeSample>> {
    let jobs: Vec<(f64, &DVector<f64>)> = sigmas.iter().flat_map(|&s| xs.iter().map(move |x| (s, x))).collect();
    jobs.par_iter()
        .map(|(s, x)| sample(problem, x, *s, fd_step, accuracy))
        .collect()
}
