//! Analytic bilevel instances with closed-form references, and a brute-force
//! grid oracle for low-dimensional bounded lower levels.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::problem::{BilevelProblem, ClosedForm, Constants, Objective, Quadratic, SolutionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TestbedName {
    /// `f = x^2 + y^2`, `g = x y` on `[-1, 1]^2`: `psi` jumps at `x = 0`.
    BilinearLl,
    /// `f = -y`, `g = (y - x)^2`, `X = [-2, 2]`, `Y = [-1, 1]`: the lower
    /// constraint activates for `|x| > 1`.
    ConstrainedSc,
    QuadSc,
    PlMultisol,
    BoxActive,
}

impl TestbedName {
    pub const ALL: [TestbedName; 5] = [
        TestbedName::BilinearLl,
        TestbedName::ConstrainedSc,
        TestbedName::QuadSc,
        TestbedName::PlMultisol,
        TestbedName::BoxActive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestbedName::BilinearLl => "bilinear_ll",
            TestbedName::ConstrainedSc => "constrained_sc",
            TestbedName::QuadSc => "quad_sc",
            TestbedName::PlMultisol => "pl_multisol",
            TestbedName::BoxActive => "box_active",
        }
    }
}

impl fmt::Display for TestbedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestbedName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestbedName::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown test problem '{s}'")))
    }
}

/// A named instance with its closed-form references.
#[derive(Clone, Debug)]
pub struct TestProblem {
    pub name: TestbedName,
    /// Carries the closed-form hooks in `base.closed_form`.
    pub base: BilevelProblem,
    /// Points (for `d_x = 1`) where `psi` is not differentiable.
    pub nondifferentiable_points: Vec<f64>,
}

impl TestProblem {
    pub fn closed_form(&self) -> &dyn ClosedForm {
        self.base
            .closed_form
            .as_deref()
            .expect("testbed problems always carry closed forms")
    }
}

pub fn make_problem(name: &str) -> Result<TestProblem> {
    Ok(build(name.parse()?))
}

pub fn build(name: TestbedName) -> TestProblem {
    match name {
        TestbedName::BilinearLl => bilinear_ll(),
        TestbedName::ConstrainedSc => constrained_sc(),
        TestbedName::QuadSc => quad_sc(),
        TestbedName::PlMultisol => pl_multisol(),
        TestbedName::BoxActive => box_active(),
    }
}

fn quadratic(dx: usize, dy: usize, q: DMatrix<f64>, b: DVector<f64>) -> Arc<dyn Objective> {
    Arc::new(Quadratic::new(dx, dy, q, b, 0.0).expect("testbed quadratics are well formed"))
}

fn scalar(v: &DVector<f64>) -> f64 {
    v[0]
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

// bilinear_ll

#[derive(Debug)]
struct BilinearHooks;

impl ClosedForm for BilinearHooks {
    fn psi(&self, x: &DVector<f64>) -> f64 {
        let x = scalar(x);
        if x == 0.0 {
            0.0
        } else {
            x * x + 1.0
        }
    }

    fn grad_psi(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let x = scalar(x);
        (x != 0.0).then(|| v1(2.0 * x))
    }

    fn solution_set(&self, x: &DVector<f64>, sigma: f64) -> SolutionSet {
        let x = scalar(x);
        if sigma > 0.0 {
            // argmin sigma y^2 + x y
            return SolutionSet::Point(v1((-x / (2.0 * sigma)).clamp(-1.0, 1.0)));
        }
        match x.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => SolutionSet::Point(v1(-1.0)),
            Some(std::cmp::Ordering::Less) => SolutionSet::Point(v1(1.0)),
            _ => SolutionSet::Segment(v1(-1.0), v1(1.0)),
        }
    }
}

fn bilinear_ll() -> TestProblem {
    let f = quadratic(1, 1, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]), DVector::zeros(2));
    let g = quadratic(1, 1, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), DVector::zeros(2));
    let unit = ConvexDomain::cube(1, -1.0, 1.0).expect("valid box");
    let base = BilevelProblem::new(
        f,
        g,
        unit.clone(),
        unit,
        Constants {
            l_f0: Some(2.0),
            l_f1: Some(2.0),
            l_g1: Some(1.0),
            c_f: Some(2.0),
            eb: None,
        },
    )
    .with_closed_form(Arc::new(BilinearHooks));
    TestProblem {
        name: TestbedName::BilinearLl,
        base,
        nondifferentiable_points: vec![0.0],
    }
}

// constrained_sc

#[derive(Debug)]
struct ConstrainedHooks;

impl ClosedForm for ConstrainedHooks {
    fn psi(&self, x: &DVector<f64>) -> f64 {
        -scalar(x).clamp(-1.0, 1.0)
    }

    fn grad_psi(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let x = scalar(x);
        if x.abs() == 1.0 {
            None
        } else if x.abs() < 1.0 {
            Some(v1(-1.0))
        } else {
            Some(v1(0.0))
        }
    }

    fn solution_set(&self, x: &DVector<f64>, sigma: f64) -> SolutionSet {
        // argmin -sigma y + (y - x)^2
        SolutionSet::Point(v1((scalar(x) + 0.5 * sigma).clamp(-1.0, 1.0)))
    }
}

fn constrained_sc() -> TestProblem {
    let f = quadratic(1, 1, DMatrix::zeros(2, 2), DVector::from_column_slice(&[0.0, -1.0]));
    let g = quadratic(1, 1, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]), DVector::zeros(2));
    let base = BilevelProblem::new(
        f,
        g,
        ConvexDomain::cube(1, -2.0, 2.0).expect("valid box"),
        ConvexDomain::cube(1, -1.0, 1.0).expect("valid box"),
        Constants {
            l_f0: Some(1.0),
            l_f1: Some(0.0),
            l_g1: Some(4.0),
            c_f: Some(1.0),
            eb: Some((1.0, f64::INFINITY)),
        },
    )
    .with_closed_form(Arc::new(ConstrainedHooks));
    TestProblem {
        name: TestbedName::ConstrainedSc,
        base,
        nondifferentiable_points: vec![-1.0, 1.0],
    }
}

// quad_sc and box_active share f = |y|^2/2 + |x|^2/2 and g = |y - A x|^2/2.

fn coupling() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])
}

fn quad_objectives(a: &DMatrix<f64>) -> (Arc<dyn Objective>, Arc<dyn Objective>, f64) {
    let f = quadratic(2, 2, DMatrix::identity(4, 4), DVector::zeros(4));
    let mut q = DMatrix::zeros(4, 4);
    q.view_mut((0, 0), (2, 2)).copy_from(&(a.transpose() * a));
    q.view_mut((0, 2), (2, 2)).copy_from(&(-a.transpose()));
    q.view_mut((2, 0), (2, 2)).copy_from(&(-a));
    q.view_mut((2, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
    // g's Hessian is B^T B with B = [-A, I], so its norm is 1 + |A|^2.
    let norm_a = a.singular_values().max();
    (f, quadratic(2, 2, q, DVector::zeros(4)), 1.0 + norm_a * norm_a)
}

#[derive(Debug)]
struct QuadHooks {
    a: DMatrix<f64>,
    /// Half-width of the lower box, `None` when `Y` is the whole plane.
    bound: Option<f64>,
}

impl QuadHooks {
    fn response(&self, x: &DVector<f64>, sigma: f64) -> DVector<f64> {
        let y = &self.a * x / (1.0 + sigma);
        match self.bound {
            Some(b) => y.map(|v| v.clamp(-b, b)),
            None => y,
        }
    }
}

impl ClosedForm for QuadHooks {
    fn psi(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.response(x, 0.0).norm_squared() + 0.5 * x.norm_squared()
    }

    fn grad_psi(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let ax = &self.a * x;
        let mut grad = x.clone();
        for i in 0..ax.len() {
            match self.bound {
                Some(b) if ax[i].abs() == b => return None,
                Some(b) if ax[i].abs() > b => {}
                _ => grad += self.a.row(i).transpose() * ax[i],
            }
        }
        Some(grad)
    }

    fn solution_set(&self, x: &DVector<f64>, sigma: f64) -> SolutionSet {
        SolutionSet::Point(self.response(x, sigma))
    }
}

fn quad_sc() -> TestProblem {
    let a = coupling();
    let (f, g, l_g1) = quad_objectives(&a);
    let base = BilevelProblem::new(
        f,
        g,
        ConvexDomain::cube(2, -2.0, 2.0).expect("valid box"),
        ConvexDomain::full(2),
        Constants {
            l_f0: Some(5.0),
            l_f1: Some(1.0),
            l_g1: Some(l_g1),
            c_f: Some(15.0),
            eb: Some((0.5, f64::INFINITY)),
        },
    )
    .with_closed_form(Arc::new(QuadHooks { a, bound: None }));
    TestProblem {
        name: TestbedName::QuadSc,
        base,
        nondifferentiable_points: Vec::new(),
    }
}

/// Lower box `[-1, 1]^2`. With `A = [[1, 0.5], [0, 1]]` the response
/// `clamp(A x / (1 + sigma))` hits the face `y_1 = 1` along the line
/// `x_1 + x_2 / 2 = 1 + sigma` and `y_2 = 1` at `x_2 = 1 + sigma`, so moving
/// `x` across `X = [-2, 2]^2` switches active sets.
fn box_active() -> TestProblem {
    let a = coupling();
    let (f, g, l_g1) = quad_objectives(&a);
    let base = BilevelProblem::new(
        f,
        g,
        ConvexDomain::cube(2, -2.0, 2.0).expect("valid box"),
        ConvexDomain::cube(2, -1.0, 1.0).expect("valid box"),
        Constants {
            l_f0: Some(2f64.sqrt()),
            l_f1: Some(1.0),
            l_g1: Some(l_g1),
            c_f: Some(5.0),
            eb: Some((0.5, f64::INFINITY)),
        },
    )
    .with_closed_form(Arc::new(QuadHooks { a, bound: Some(1.0) }));
    TestProblem {
        name: TestbedName::BoxActive,
        base,
        nondifferentiable_points: Vec::new(),
    }
}

// pl_multisol: g = (a^T y - x)^2 / 2 with a = e_1, f = c^T y + |y|^2 / 2 with
// c = e_2. The lower solution set is the line {(x, t)}; f restricted to it is
// t + (x^2 + t^2) / 2, minimized at t = -1, so psi(x) = x^2 / 2 - 1/2.
// With sigma > 0 the unique minimizer is (x / (1 + sigma), -1).
//
// The proximal error bound at sigma = 0 follows from prox of the rank-one
// quadratic: the residual along e_1 is dist / (1 + rho), so mu = 0.8 holds
// for every rho <= 1/4.

#[derive(Debug)]
struct PlHooks;

impl ClosedForm for PlHooks {
    fn psi(&self, x: &DVector<f64>) -> f64 {
        let x = scalar(x);
        0.5 * x * x - 0.5
    }

    fn grad_psi(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(x.clone())
    }

    fn solution_set(&self, x: &DVector<f64>, sigma: f64) -> SolutionSet {
        let x = scalar(x);
        if sigma > 0.0 {
            SolutionSet::Point(DVector::from_column_slice(&[x / (1.0 + sigma), -1.0]))
        } else {
            SolutionSet::Line {
                point: DVector::from_column_slice(&[x, 0.0]),
                direction: DVector::from_column_slice(&[0.0, 1.0]),
            }
        }
    }
}

fn pl_multisol() -> TestProblem {
    let f = quadratic(
        1,
        2,
        DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, 1.0, 1.0])),
        DVector::from_column_slice(&[0.0, 0.0, 1.0]),
    );
    let g = quadratic(
        1,
        2,
        DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        DVector::zeros(3),
    );
    let base = BilevelProblem::new(
        f,
        g,
        ConvexDomain::cube(1, -2.0, 2.0).expect("valid box"),
        ConvexDomain::full(2),
        Constants {
            l_f0: Some(2.0),
            l_f1: Some(1.0),
            l_g1: Some(2.0),
            c_f: Some(2.0),
            eb: Some((0.8, f64::INFINITY)),
        },
    )
    .with_closed_form(Arc::new(PlHooks));
    TestProblem {
        name: TestbedName::PlMultisol,
        base,
        nondifferentiable_points: Vec::new(),
    }
}

/// Default grid spacing: `1e-3` for `d_y = 1`, `1e-2` otherwise.
pub fn default_grid_resolution(dim_y: usize) -> f64 {
    if dim_y <= 1 {
        1e-3
    } else {
        1e-2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridMinimum {
    /// `min_Y h_sigma(x, .)`.
    pub l_value: f64,
    /// Refined near-minimal grid points, in grid order.
    pub argmin_set: Vec<DVector<f64>>,
}

const REFINE_STEPS: usize = 20;

/// Exhaustive minimization of `h_sigma(x, .)` over a uniform grid of a
/// bounded `Y` with `d_y <= 3`.
///
/// Grid points within `L_h res^2 / 2` of the best value are kept and each is
/// refined by a few projected gradient steps.
pub fn grid_oracle(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, resolution: f64) -> Result<GridMinimum> {
    let dy = problem.dim_y();
    if dy > 3 {
        return Err(Error::unsupported(format!("grid oracle needs d_y <= 3, got {dy}")));
    }
    let Some((lo, hi)) = problem.domain_y.bounding_box() else {
        return Err(Error::unsupported("grid oracle needs a bounded lower-level domain"));
    };
    if !(resolution > 0.0) {
        return Err(Error::argument("grid resolution must be positive"));
    }
    if x.len() != problem.dim_x() {
        return Err(Error::argument("x has the wrong dimension"));
    }
    let counts: Vec<usize> = (0..dy)
        .map(|i| ((hi[i] - lo[i]) / resolution).round() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();
    let point = |mut idx: usize| -> DVector<f64> {
        DVector::from_fn(dy, |i, _| {
            let j = idx % counts[i];
            idx /= counts[i];
            if counts[i] == 1 {
                lo[i]
            } else {
                lo[i] + (hi[i] - lo[i]) * j as f64 / (counts[i] - 1) as f64
            }
        })
    };
    let values: Vec<Option<f64>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let y = point(idx);
            problem
                .domain_y
                .contains(&y, 1e-12)
                .then(|| problem.h_value(x, &y, sigma))
        })
        .collect();
    let best = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::numerical("grid oracle found no finite value", best));
    }
    let lh = problem.h_smoothness(sigma).unwrap_or(1.0).max(1e-12);
    let tol = 0.5 * lh * resolution * resolution + 1e-12 * (1.0 + best.abs());
    let step = 1.0 / lh;
    let argmin_set: Vec<DVector<f64>> = values
        .par_iter()
        .enumerate()
        .filter_map(|(idx, v)| v.filter(|v| *v <= best + tol).map(|_| idx))
        .map(|idx| refine(problem, x, sigma, point(idx), step))
        .collect::<Result<_>>()?;
    let l_value = argmin_set
        .iter()
        .map(|y| problem.h_value(x, y, sigma))
        .fold(best, f64::min);
    Ok(GridMinimum { l_value, argmin_set })
}

fn refine(problem: &BilevelProblem, x: &DVector<f64>, sigma: f64, mut y: DVector<f64>, step: f64) -> Result<DVector<f64>> {
    let start_value = problem.h_value(x, &y, sigma);
    let start = y.clone();
    for _ in 0..REFINE_STEPS {
        let (_, gy) = problem.h_gradient(x, &y, sigma);
        y = problem.domain_y.project_vec(&(&y - gy * step))?;
    }
    // Projected gradient with step 1/L never increases h; guard against
    // rounding on flat regions anyway.
    if problem.h_value(x, &y, sigma) > start_value {
        return Ok(start);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn names_round_trip() {
        for n in TestbedName::ALL {
            assert_eq!(n.name().parse::<TestbedName>().unwrap(), n);
        }
        assert!(matches!(make_problem("nope"), Err(Error::Argument(_))));
    }

    #[test]
    fn bilinear_psi_values() {
        let p = build(TestbedName::BilinearLl);
        assert_eq!(p.closed_form().psi(&v(&[0.5])), 1.25);
        assert_eq!(p.closed_form().psi(&v(&[0.0])), 0.0);
    }

    #[test]
    fn constrained_psi_profile() {
        let p = build(TestbedName::ConstrainedSc);
        let cf = p.closed_form();
        assert_eq!(cf.psi(&v(&[-1.5])), 1.0);
        assert!((cf.psi(&v(&[0.3])) + 0.3).abs() < 1e-15);
        assert_eq!(cf.psi(&v(&[1.7])), -1.0);
        assert!(cf.grad_psi(&v(&[1.0])).is_none());
    }

    #[test]
    fn pl_solution_line_and_psi() {
        let p = build(TestbedName::PlMultisol);
        let cf = p.closed_form();
        let set = cf.solution_set(&v(&[0.7]), 0.0);
        assert_eq!(set.distance(&v(&[0.7, 42.0])), 0.0);
        // minimize f over the line by brute force along t
        let best = (0..=40_000)
            .map(|i| -20.0 + i as f64 * 1e-3)
            .map(|t| p.base.f.value(&v(&[0.7]), &v(&[0.7, t])))
            .fold(f64::INFINITY, f64::min);
        assert!((cf.psi(&v(&[0.7])) - best).abs() < 1e-9);
        assert!((cf.psi(&v(&[0.7])) - (0.5 * 0.49 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn quad_closed_form_matches_unconstrained_minimizer() {
        let p = build(TestbedName::QuadSc);
        let x = v(&[0.4, -1.3]);
        let sigma = 0.2;
        let y = p.closed_form().solution_set(&x, sigma).representative();
        let (_, gy) = p.base.h_gradient(&x, &y, sigma);
        assert!(gy.norm() < 1e-14);
        let l = p.base.constants.l_g1.unwrap();
        // 1 + largest singular value of A squared; A^T A has eigenvalues (9 +- sqrt(17))/8
        assert!((l - (1.0 + (9.0 + 17f64.sqrt()) / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn grid_bilinear_examples() {
        let p = build(TestbedName::BilinearLl);
        let r = grid_oracle(&p.base, &v(&[0.5]), 0.0, 1e-3).unwrap();
        assert!((r.l_value + 0.5).abs() < 1e-12);
        assert_eq!(r.argmin_set.len(), 1);
        assert!((r.argmin_set[0][0] + 1.0).abs() < 1e-12);

        let r = grid_oracle(&p.base, &v(&[0.0]), 0.0, 1e-3).unwrap();
        assert_eq!(r.l_value, 0.0);
        assert_eq!(r.argmin_set.len(), 2001);
    }

    #[test]
    fn grid_box_active_matches_projection() {
        let p = build(TestbedName::BoxActive);
        let res = 1e-2;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let sigma = 0.1;
            let r = grid_oracle(&p.base, &x, sigma, res).unwrap();
            let exact = p.closed_form().solution_set(&x, sigma).representative();
            for y in &r.argmin_set {
                assert!((y - &exact).norm() <= 2.0 * res);
            }
        }
    }

    #[test]
    fn grid_rejects_unbounded() {
        let p = build(TestbedName::QuadSc);
        let r = grid_oracle(&p.base, &v(&[0.0, 0.0]), 0.0, 1e-2);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn closed_forms_agree_with_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in [TestbedName::BilinearLl, TestbedName::ConstrainedSc, TestbedName::BoxActive] {
            let p = build(name);
            let res = default_grid_resolution(p.base.dim_y());
            let (lo, hi) = p.base.domain_x.bounding_box().unwrap();
            for _ in 0..50 {
                let x = DVector::from_fn(p.base.dim_x(), |i, _| rng.random_range(lo[i]..hi[i]));
                let set = p.closed_form().solution_set(&x, 0.0);
                let grid = grid_oracle(&p.base, &x, 0.0, res).unwrap();
                let psi_grid = grid
                    .argmin_set
                    .iter()
                    .map(|y| p.base.f.value(&x, y))
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    (psi_grid - p.closed_form().psi(&x)).abs() <= 2.0 * res,
                    "{name} at {x}: {psi_grid} vs {}",
                    p.closed_form().psi(&x)
                );
                for y in &grid.argmin_set {
                    assert!(set.distance(y) <= 2.0 * res);
                }
            }
        }
    }
}
