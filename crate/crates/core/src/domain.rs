//! Points, convex domains and Euclidean projections.
//!
//! Every domain can be described algebraically as a list of smooth convex
//! inequality constraints `g_i(y) <= 0` plus affine equalities `h_i(y) = 0`.
//! The landscape module uses that description for active sets and KKT
//! multipliers; the solvers only ever need [`ConvexDomain::project`].

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Feasibility tolerance used for membership checks and iterative projections.
pub const FEASIBILITY_TOL: f64 = 1e-10;

const POLYHEDRON_MAX_ITERS: usize = 10_000;

/// A finite real vector. Construction rejects NaN and infinite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(DVector<f64>);

impl Point {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::numerical(
                format!("non-finite coordinate {} at index {i}", coords[i]),
                f64::NAN,
            ));
        }
        Ok(Point(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Point(DVector::zeros(dim))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl Deref for Point {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<Point> for DVector<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

/// A smooth convex scalar constraint `c(y) <= 0`.
pub trait ConstraintFn: Send + Sync + fmt::Debug {
    fn value(&self, y: &DVector<f64>) -> f64;
    fn gradient(&self, y: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64>;

    fn is_convex(&self) -> bool {
        true
    }

    /// `Some((a, b))` when the constraint is `a^T y - b`.
    fn as_affine(&self) -> Option<(&DVector<f64>, f64)> {
        None
    }
}

/// The affine function `normal^T y - offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineConstraint {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl AffineConstraint {
    pub fn new(normal: DVector<f64>, offset: f64) -> Self {
        AffineConstraint { normal, offset }
    }
}

impl ConstraintFn for AffineConstraint {
    fn value(&self, y: &DVector<f64>) -> f64 {
        self.normal.dot(y) - self.offset
    }

    fn gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
        self.normal.clone()
    }

    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(y.len(), y.len())
    }

    fn as_affine(&self) -> Option<(&DVector<f64>, f64)> {
        Some((&self.normal, self.offset))
    }
}

/// `||y - center||^2 - radius^2 <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallConstraint {
    pub center: DVector<f64>,
    pub radius: f64,
}

impl ConstraintFn for BallConstraint {
    fn value(&self, y: &DVector<f64>) -> f64 {
        (y - &self.center).norm_squared() - self.radius * self.radius
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        (y - &self.center) * 2.0
    }

    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(y.len(), y.len()) * 2.0
    }
}

#[derive(Clone, Debug)]
pub enum DomainKind {
    FullSpace {
        dim: usize,
    },
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    Ball {
        center: DVector<f64>,
        radius: f64,
    },
    /// The probability simplex `{y >= 0, sum(y) = 1}`.
    Simplex {
        dim: usize,
    },
    Polyhedron {
        dim: usize,
        inequalities: Vec<Arc<dyn ConstraintFn>>,
        equalities: Vec<AffineConstraint>,
    },
}

/// A closed convex set with an exact or iterative Euclidean projection.
#[derive(Clone, Debug)]
pub struct ConvexDomain {
    kind: DomainKind,
    diameter_bound: Option<f64>,
}

impl ConvexDomain {
    pub fn full(dim: usize) -> Self {
        ConvexDomain {
            kind: DomainKind::FullSpace { dim },
            diameter_bound: None,
        }
    }

    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::argument("box bounds have different dimensions"));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::argument("box bounds contain NaN"));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::argument(format!(
                "box lower bound {} exceeds upper bound {} at index {i}",
                lower[i], upper[i]
            )));
        }
        let diameter_bound = lower
            .iter()
            .zip(upper.iter())
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(ConvexDomain {
            kind: DomainKind::Box { lower, upper },
            diameter_bound: diameter_bound.is_finite().then_some(diameter_bound),
        })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(
            DVector::from_element(dim, lo),
            DVector::from_element(dim, hi),
        )
    }

    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::argument(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        let bound = center.norm() + radius;
        Ok(ConvexDomain {
            kind: DomainKind::Ball { center, radius },
            diameter_bound: Some(bound),
        })
    }

    pub fn simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::argument("simplex dimension must be positive"));
        }
        Ok(ConvexDomain {
            kind: DomainKind::Simplex { dim },
            diameter_bound: Some(1.0),
        })
    }

    /// A set described by convex inequalities and affine equalities.
    ///
    /// Nonemptiness is checked by projecting the origin.
    pub fn polyhedron(
        dim: usize,
        inequalities: Vec<Arc<dyn ConstraintFn>>,
        equalities: Vec<AffineConstraint>,
        diameter_bound: Option<f64>,
    ) -> Result<Self> {
        if let Some(c) = inequalities.iter().find(|c| !c.is_convex()) {
            return Err(Error::argument(format!(
                "inequality constraint {c:?} is not convex"
            )));
        }
        if equalities.iter().any(|e| e.normal.len() != dim) {
            return Err(Error::argument("equality constraint dimension mismatch"));
        }
        if let Some(d) = diameter_bound {
            if !(d > 0.0) {
                return Err(Error::argument("diameter bound must be positive"));
            }
        }
        let domain = ConvexDomain {
            kind: DomainKind::Polyhedron {
                dim,
                inequalities,
                equalities,
            },
            diameter_bound,
        };
        let origin = Point::zeros(dim);
        let projected = domain.project(&origin).map_err(|e| {
            Error::argument(format!("polyhedron appears to be empty: {e}"))
        })?;
        if !domain.contains(&projected, 1e-8) {
            return Err(Error::argument("polyhedron appears to be empty"));
        }
        Ok(domain)
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::FullSpace { dim } | DomainKind::Simplex { dim } => *dim,
            DomainKind::Polyhedron { dim, .. } => *dim,
            DomainKind::Box { lower, .. } => lower.len(),
            DomainKind::Ball { center, .. } => center.len(),
        }
    }

    /// Bound on `max_{y in Y} ||y||`, when the domain is bounded.
    pub fn diameter_bound(&self) -> Option<f64> {
        self.diameter_bound
    }

    pub fn is_bounded(&self) -> bool {
        self.diameter_bound.is_some()
    }

    /// Axis-aligned bounding box, when one is available.
    pub fn bounding_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        match &self.kind {
            DomainKind::Box { lower, upper } => {
                if lower.iter().chain(upper.iter()).all(|v| v.is_finite()) {
                    Some((lower.clone(), upper.clone()))
                } else {
                    None
                }
            }
            DomainKind::Ball { center, radius } => Some((
                center.map(|c| c - radius),
                center.map(|c| c + radius),
            )),
            DomainKind::Simplex { dim } => {
                Some((DVector::zeros(*dim), DVector::from_element(*dim, 1.0)))
            }
            DomainKind::Polyhedron { dim, .. } => self
                .diameter_bound
                .map(|d| (DVector::from_element(*dim, -d), DVector::from_element(*dim, d))),
            DomainKind::FullSpace { .. } => None,
        }
    }

    /// Inequality constraints `c_i(y) <= 0` describing the set.
    pub fn inequality_constraints(&self) -> Vec<Arc<dyn ConstraintFn>> {
        match &self.kind {
            DomainKind::FullSpace { .. } => Vec::new(),
            DomainKind::Box { lower, upper } => {
                let n = lower.len();
                let mut out: Vec<Arc<dyn ConstraintFn>> = Vec::new();
                for i in 0..n {
                    if upper[i].is_finite() {
                        let mut e = DVector::zeros(n);
                        e[i] = 1.0;
                        out.push(Arc::new(AffineConstraint::new(e, upper[i])));
                    }
                    if lower[i].is_finite() {
                        let mut e = DVector::zeros(n);
                        e[i] = -1.0;
                        out.push(Arc::new(AffineConstraint::new(e, -lower[i])));
                    }
                }
                out
            }
            DomainKind::Ball { center, radius } => vec![Arc::new(BallConstraint {
                center: center.clone(),
                radius: *radius,
            })],
            DomainKind::Simplex { dim } => (0..*dim)
                .map(|i| {
                    let mut e = DVector::zeros(*dim);
                    e[i] = -1.0;
                    Arc::new(AffineConstraint::new(e, 0.0)) as Arc<dyn ConstraintFn>
                })
                .collect(),
            DomainKind::Polyhedron { inequalities, .. } => inequalities.clone(),
        }
    }

    /// Affine equality constraints `a_i^T y - b_i = 0`.
    pub fn equality_constraints(&self) -> Vec<AffineConstraint> {
        match &self.kind {
            DomainKind::Simplex { dim } => {
                vec![AffineConstraint::new(DVector::from_element(*dim, 1.0), 1.0)]
            }
            DomainKind::Polyhedron { equalities, .. } => equalities.clone(),
            _ => Vec::new(),
        }
    }

    /// Largest constraint violation at `p` (zero when feasible).
    pub fn violation(&self, p: &DVector<f64>) -> f64 {
        let ineq = self
            .inequality_constraints()
            .iter()
            .map(|c| c.value(p).max(0.0))
            .fold(0.0, f64::max);
        let eq = self
            .equality_constraints()
            .iter()
            .map(|c| c.value(p).abs())
            .fold(0.0, f64::max);
        ineq.max(eq)
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        p.len() == self.dim() && self.violation(p) <= tol
    }

    fn check_dim(&self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::argument(format!(
                "point has dimension {}, domain has dimension {}",
                p.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Euclidean projection onto the domain.
    pub fn project(&self, p: &Point) -> Result<Point> {
        Point::new(self.project_vec(p)?)
    }

    pub fn project_vec(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(p)?;
        match &self.kind {
            DomainKind::FullSpace { .. } => Ok(p.clone()),
            DomainKind::Box { lower, upper } => Ok(DVector::from_iterator(
                p.len(),
                p.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(v, (l, u))| v.clamp(*l, *u)),
            )),
            DomainKind::Ball { center, radius } => {
                let d = p - center;
                let n = d.norm();
                if n <= *radius {
                    Ok(p.clone())
                } else {
                    Ok(center + d * (*radius / n))
                }
            }
            DomainKind::Simplex { .. } => Ok(project_simplex(p)),
            DomainKind::Polyhedron {
                inequalities,
                equalities,
                ..
            } => project_dykstra(p, inequalities, equalities),
        }
    }
}

/// Sort-based exact projection onto the probability simplex.
fn project_simplex(p: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = p.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        }
    }
    p.map(|v| (v - theta).max(0.0))
}

/// Projection onto the affine subspace `{y : A y = b}`.
fn project_affine_subspace(p: &DVector<f64>, eqs: &[AffineConstraint]) -> DVector<f64> {
    if eqs.is_empty() {
        return p.clone();
    }
    let n = p.len();
    let a = DMatrix::from_fn(eqs.len(), n, |i, j| eqs[i].normal[j]);
    let r = DVector::from_iterator(eqs.len(), eqs.iter().map(|e| e.value(p)));
    // p - A^T (A A^T)^+ (A p - b)
    let gram = &a * a.transpose();
    let lambda = gram
        .pseudo_inverse(1e-12)
        .map(|g| g * r)
        .unwrap_or_else(|_| DVector::zeros(eqs.len()));
    p - a.transpose() * lambda
}

/// Projection onto a single convex set `{c(y) <= 0}`.
fn project_single(p: &DVector<f64>, c: &dyn ConstraintFn) -> DVector<f64> {
    let v = c.value(p);
    if v <= 0.0 {
        return p.clone();
    }
    if let Some((a, b)) = c.as_affine() {
        let nn = a.norm_squared();
        if nn == 0.0 {
            return p.clone();
        }
        return p - a * ((a.dot(p) - b) / nn);
    }
    // Find lambda >= 0 with c(y(lambda)) = 0, where y(lambda) minimizes
    // 0.5||y - p||^2 + lambda c(y).
    let solve = |lambda: f64, start: &DVector<f64>| -> DVector<f64> {
        let mut y = start.clone();
        for _ in 0..50 {
            let grad = &y - p + c.gradient(&y) * lambda;
            if grad.norm() <= 1e-15 * (1.0 + p.norm()) {
                break;
            }
            let h = DMatrix::identity(y.len(), y.len()) + c.hessian(&y) * lambda;
            match h.lu().solve(&grad) {
                Some(step) => y -= step,
                None => break,
            }
        }
        y
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut y_hi = solve(hi, p);
    while c.value(&y_hi) > 0.0 && hi < 1e12 {
        lo = hi;
        hi *= 2.0;
        y_hi = solve(hi, &y_hi);
    }
    let mut y = y_hi.clone();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        y = solve(mid, &y);
        if c.value(&y) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            y_hi = y.clone();
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    y_hi
}

/// Dykstra's alternating projections onto the individual constraint sets.
fn project_dykstra(
    p: &DVector<f64>,
    inequalities: &[Arc<dyn ConstraintFn>],
    equalities: &[AffineConstraint],
) -> Result<DVector<f64>> {
    let sets = inequalities.len() + usize::from(!equalities.is_empty());
    if sets == 0 {
        return Ok(p.clone());
    }
    let violation = |y: &DVector<f64>| {
        let ineq = inequalities
            .iter()
            .map(|c| c.value(y).max(0.0))
            .fold(0.0, f64::max);
        let eq = equalities
            .iter()
            .map(|c| c.value(y).abs())
            .fold(0.0, f64::max);
        ineq.max(eq)
    };
    if violation(p) <= 0.0 {
        return Ok(p.clone());
    }
    let mut x = p.clone();
    let mut increments = vec![DVector::zeros(p.len()); sets];
    let mut residual = f64::INFINITY;
    for _ in 0..POLYHEDRON_MAX_ITERS {
        let start = x.clone();
        for (i, inc) in increments.iter_mut().enumerate() {
            let shifted = &x + &*inc;
            let projected = if i < inequalities.len() {
                project_single(&shifted, inequalities[i].as_ref())
            } else {
                project_affine_subspace(&shifted, equalities)
            };
            *inc = shifted - &projected;
            x = projected;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("non-finite iterate in polyhedral projection", residual));
        }
        residual = violation(&x);
        let moved = (&x - &start).norm();
        if residual <= FEASIBILITY_TOL && moved <= 1e-14 * (1.0 + x.norm()) {
            return Ok(x);
        }
    }
    if residual <= FEASIBILITY_TOL {
        return Ok(x);
    }
    Err(Error::numerical(
        format!("polyhedral projection did not converge in {POLYHEDRON_MAX_ITERS} iterations"),
        residual,
    ))
}

/// Projected-gradient residual `||p - P(p - step v)|| / step`.
///
/// Zero exactly when `-v` lies in the normal cone of the domain at `p`.
pub fn normal_cone_residual(
    domain: &ConvexDomain,
    p: &Point,
    v: &DVector<f64>,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::argument(format!("step must be positive, got {step}")));
    }
    if v.len() != p.len() {
        return Err(Error::argument("direction dimension mismatch"));
    }
    let moved = domain.project_vec(&(p.coords() - v * step))?;
    Ok((p.coords() - moved).norm() / step)
}
