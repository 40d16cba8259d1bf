//! Bilevel problem description: upper objective `f`, lower objective `g`,
//! the domains `X` and `Y`, declared smoothness constants and optional
//! closed-form hooks for analytic instances.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::domain::{ConvexDomain, FEASIBILITY_TOL};
use crate::error::{Error, Result};

/// A scalar function of `(x, y)` with first-order and optional second-order
/// access.
pub trait Objective: Send + Sync + fmt::Debug {
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;

    /// Returns `(grad_x, grad_y)`.
    fn gradient(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>);

    /// `d^2/dy^2`, `d_y x d_y`.
    fn hess_yy(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Mixed block `d^2/(dx dy)` laid out `d_x x d_y`.
    fn hess_xy(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// `0.5 [x;y]^T Q [x;y] + b^T [x;y] + c` with `Q` symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    dim_x: usize,
    dim_y: usize,
    q: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl Quadratic {
    pub fn new(dim_x: usize, dim_y: usize, q: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let n = dim_x + dim_y;
        if q.nrows() != n || q.ncols() != n || b.len() != n {
            return Err(Error::argument("quadratic coefficient dimensions do not match"));
        }
        if (&q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
            return Err(Error::argument("quadratic form must be symmetric"));
        }
        Ok(Quadratic { dim_x, dim_y, q, b, c })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.q
    }

    fn stack(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim_x + self.dim_y);
        z.rows_mut(0, self.dim_x).copy_from(x);
        z.rows_mut(self.dim_x, self.dim_y).copy_from(y);
        z
    }
}

impl Objective for Quadratic {
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let z = self.stack(x, y);
        0.5 * z.dot(&(&self.q * &z)) + self.b.dot(&z) + self.c
    }

    fn gradient(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = self.stack(x, y);
        let g = &self.q * z + &self.b;
        (
            g.rows(0, self.dim_x).into_owned(),
            g.rows(self.dim_x, self.dim_y).into_owned(),
        )
    }

    fn hess_yy(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(
            self.q
                .view((self.dim_x, self.dim_x), (self.dim_y, self.dim_y))
                .into_owned(),
        )
    }

    fn hess_xy(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.q.view((0, self.dim_x), (self.dim_x, self.dim_y)).into_owned())
    }
}

/// Problem constants treated as known data. `None` means "unknown".
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Constants {
    /// Bound on `||grad_y f||`.
    pub l_f0: Option<f64>,
    pub l_f1: Option<f64>,
    pub l_g1: Option<f64>,
    /// Bound on `|f|` over the feasible region.
    pub c_f: Option<f64>,
    /// Proximal error-bound constants `(mu, delta)` where derivable.
    pub eb: Option<(f64, f64)>,
}

/// A lower-level solution set `T(x, sigma)` in parametric form.
#[derive(Clone, Debug, PartialEq)]
pub enum SolutionSet {
    Point(DVector<f64>),
    /// The segment between two points.
    Segment(DVector<f64>, DVector<f64>),
    /// `{point + t * direction : t in R}`.
    Line {
        point: DVector<f64>,
        direction: DVector<f64>,
    },
}

impl SolutionSet {
    /// Distance from `y` to the set.
    pub fn distance(&self, y: &DVector<f64>) -> f64 {
        match self {
            SolutionSet::Point(p) => (y - p).norm(),
            SolutionSet::Segment(a, b) => {
                let d = b - a;
                let dd = d.norm_squared();
                let t = if dd == 0.0 {
                    0.0
                } else {
                    ((y - a).dot(&d) / dd).clamp(0.0, 1.0)
                };
                (y - (a + d * t)).norm()
            }
            SolutionSet::Line { point, direction } => {
                let dd = direction.norm_squared();
                let r = y - point;
                if dd == 0.0 {
                    return r.norm();
                }
                (&r - direction * (r.dot(direction) / dd)).norm()
            }
        }
    }

    /// A representative member of the set.
    pub fn representative(&self) -> DVector<f64> {
        match self {
            SolutionSet::Point(p) => p.clone(),
            SolutionSet::Segment(a, b) => (a + b) * 0.5,
            SolutionSet::Line { point, .. } => point.clone(),
        }
    }

    fn extreme_points(&self) -> Option<Vec<&DVector<f64>>> {
        match self {
            SolutionSet::Point(p) => Some(vec![p]),
            SolutionSet::Segment(a, b) => Some(vec![a, b]),
            SolutionSet::Line { .. } => None,
        }
    }

    /// Hausdorff distance between two solution sets.
    pub fn hausdorff(&self, other: &SolutionSet) -> f64 {
        match (self, other) {
            (
                SolutionSet::Line {
                    point: p1,
                    direction: d1,
                },
                SolutionSet::Line {
                    point: p2,
                    direction: d2,
                },
            ) => {
                let cos = d1.dot(d2).abs() / (d1.norm() * d2.norm());
                if (1.0 - cos).abs() > 1e-12 {
                    return f64::INFINITY;
                }
                other.distance(p1).max(self.distance(p2))
            }
            _ => match (self.extreme_points(), other.extreme_points()) {
                // For convex polytopes the sup of a convex distance function
                // is attained at an extreme point.
                (Some(a), Some(b)) => {
                    let ab = a.iter().map(|p| other.distance(p)).fold(0.0, f64::max);
                    let ba = b.iter().map(|p| self.distance(p)).fold(0.0, f64::max);
                    ab.max(ba)
                }
                _ => f64::INFINITY,
            },
        }
    }
}

/// Closed-form references available for analytic instances.
pub trait ClosedForm: Send + Sync + fmt::Debug {
    /// Hyper-objective `psi(x)`.
    fn psi(&self, x: &DVector<f64>) -> f64;

    /// Gradient of `psi`, where it exists.
    fn grad_psi(&self, x: &DVector<f64>) -> Option<DVector<f64>>;

    /// Solution set `T(x, sigma)` of the perturbed lower-level problem.
    fn solution_set(&self, x: &DVector<f64>, sigma: f64) -> SolutionSet;
}

/// The bilevel problem `min_{x in X} f(x, y*)` with `y* in argmin_{y in Y} g(x, y)`.
#[derive(Clone, Debug)]
pub struct BilevelProblem {
    pub f: Arc<dyn Objective>,
    pub g: Arc<dyn Objective>,
    pub domain_x: ConvexDomain,
    pub domain_y: ConvexDomain,
    pub constants: Constants,
    pub closed_form: Option<Arc<dyn ClosedForm>>,
}

impl BilevelProblem {
    pub fn new(
        f: Arc<dyn Objective>,
        g: Arc<dyn Objective>,
        domain_x: ConvexDomain,
        domain_y: ConvexDomain,
        constants: Constants,
    ) -> Self {
        BilevelProblem {
            f,
            g,
            domain_x,
            domain_y,
            constants,
            closed_form: None,
        }
    }

    pub fn with_closed_form(mut self, hooks: Arc<dyn ClosedForm>) -> Self {
        self.closed_form = Some(hooks);
        self
    }

    pub fn dim_x(&self) -> usize {
        self.domain_x.dim()
    }

    pub fn dim_y(&self) -> usize {
        self.domain_y.dim()
    }

    pub(crate) fn check_feasible(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim_x() || y.len() != self.dim_y() {
            return Err(Error::argument(format!(
                "point dimensions ({}, {}) do not match problem ({}, {})",
                x.len(),
                y.len(),
                self.dim_x(),
                self.dim_y()
            )));
        }
        let tol = 1e3 * FEASIBILITY_TOL;
        if !self.domain_x.contains(x, tol) {
            return Err(Error::argument("x is infeasible"));
        }
        if !self.domain_y.contains(y, tol) {
            return Err(Error::argument("y is infeasible"));
        }
        Ok(())
    }

    /// `h_sigma(x, y) = sigma f(x, y) + g(x, y)`.
    pub fn h_value(&self, x: &DVector<f64>, y: &DVector<f64>, sigma: f64) -> f64 {
        if sigma == 0.0 {
            self.g.value(x, y)
        } else {
            sigma * self.f.value(x, y) + self.g.value(x, y)
        }
    }

    /// Exact `(grad_x, grad_y)` of `h_sigma`.
    pub fn h_gradient(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        sigma: f64,
    ) -> (DVector<f64>, DVector<f64>) {
        let (gx, gy) = self.g.gradient(x, y);
        if sigma == 0.0 {
            return (gx, gy);
        }
        let (fx, fy) = self.f.gradient(x, y);
        (fx * sigma + gx, fy * sigma + gy)
    }

    /// Smoothness of `h_sigma` in `y`, when the constants are declared.
    pub(crate) fn h_smoothness(&self, sigma: f64) -> Option<f64> {
        let lg = self.constants.l_g1?;
        Some(lg + sigma * self.constants.l_f1.unwrap_or(0.0))
    }

    /// Randomized check that gradient differences respect the declared
    /// smoothness constants (within 1%). Returns the worst observed ratio
    /// of measured to declared constant for `f` and `g`.
    pub fn spot_check_constants(&self, samples: usize, seed: u64) -> (Option<f64>, Option<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sample = |rng: &mut rand_chacha::ChaCha8Rng, d: &ConvexDomain| -> DVector<f64> {
            let (lo, hi) = d
                .bounding_box()
                .unwrap_or_else(|| (DVector::from_element(d.dim(), -2.0), DVector::from_element(d.dim(), 2.0)));
            let raw = DVector::from_fn(d.dim(), |i, _| rng.random_range(lo[i]..=hi[i]));
            d.project_vec(&raw).unwrap_or(raw)
        };
        let mut worst_f: f64 = 0.0;
        let mut worst_g: f64 = 0.0;
        for _ in 0..samples {
            let (x1, y1) = (sample(&mut rng, &self.domain_x), sample(&mut rng, &self.domain_y));
            let (x2, y2) = (sample(&mut rng, &self.domain_x), sample(&mut rng, &self.domain_y));
            let dist = ((&x1 - &x2).norm_squared() + (&y1 - &y2).norm_squared()).sqrt();
            if dist == 0.0 {
                continue;
            }
            let diff = |o: &dyn Objective| {
                let (ax, ay) = o.gradient(&x1, &y1);
                let (bx, by) = o.gradient(&x2, &y2);
                ((ax - bx).norm_squared() + (ay - by).norm_squared()).sqrt() / dist
            };
            worst_f = worst_f.max(diff(self.f.as_ref()));
            worst_g = worst_g.max(diff(self.g.as_ref()));
        }
        let ratio = |measured: f64, declared: Option<f64>| {
            declared.map(|d| if d > 0.0 { measured / d } else if measured > 0.0 { f64::INFINITY } else { 0.0 })
        };
        let rf = ratio(worst_f, self.constants.l_f1);
        let rg = ratio(worst_g, self.constants.l_g1);
        for (name, r) in [("l_f1", rf), ("l_g1", rg)] {
            if let Some(r) = r {
                if r > 1.01 {
                    log::warn!("declared {name} is exceeded by a factor {r:.3} in spot checks");
                }
            }
        }
        (rf, rg)
    }
}
