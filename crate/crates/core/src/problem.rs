//! Problem data: fields, tracking data, control bounds and solver settings.

use std::fmt;
use std::sync::Arc;

use crate::assembly;
use crate::error::{Error, Result};
use crate::geometry::{dirac_load_vector, Mesh, Point, SparseVector};
use crate::nonlinearity::Nonlinearity;

/// Nodal P1 coefficients. Used for the state `y`, the adjoint `p` and the
/// sensitivities `z`, `γ`, `η`; all vanish on boundary vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
}

pub type StateField = NodalField;
pub type AdjointField = NodalField;

impl NodalField {
    pub fn zeros(n: usize) -> Self {
        NodalField { values: vec![0.0; n] }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Piecewise-constant control, one value per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub values: Vec<f64>,
}

impl ControlField {
    pub fn constant(num_cells: usize, value: f64) -> Self {
        ControlField { values: vec![value; num_cells] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + scale · other`
    pub fn axpy(&self, scale: f64, other: &ControlField) -> ControlField {
        ControlField { values: self.values.iter().zip(&other.values).map(|(a, b)| a + scale * b).collect() }
    }
}

/// `L²` inner product of two cellwise-constant fields.
pub fn cell_inner(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(mesh.areas()).map(|((x, y), w)| x * y * w).sum()
}

pub fn cell_norm(mesh: &Mesh, a: &[f64]) -> f64 {
    cell_inner(mesh, a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::invalid(format!("control bounds need a < b, got [{lower}, {upper}]")));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Tracking points `𝒟` and their targets `y_t`, in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackingData {
    pub points: Vec<Point>,
    pub targets: Vec<f64>,
}

impl TrackingData {
    pub fn new(points: Vec<Point>, targets: Vec<f64>) -> Self {
        TrackingData { points, targets }
    }

    pub fn empty() -> Self {
        TrackingData::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every violated invariant, as messages.
    pub fn violations(&self, mesh: &Mesh) -> Vec<String> {
        let mut out = Vec::new();
        if self.points.len() != self.targets.len() {
            out.push(format!(
                "{} tracking points but {} targets",
                self.points.len(),
                self.targets.len()
            ));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !mesh.is_strictly_interior(*p) {
                out.push(format!("tracking point {i} ({}, {}) is not strictly interior", p.x, p.y));
            }
            for (j, q) in self.points.iter().enumerate().skip(i + 1) {
                if p == q {
                    out.push(format!("tracking points {i} and {j} coincide"));
                }
            }
        }
        if let Some(i) = self.targets.iter().position(|t| !t.is_finite()) {
            out.push(format!("target {i} is not finite"));
        }
        out
    }
}

/// Right-hand side `f`, evaluated at quadrature points.
#[derive(Clone)]
pub enum Source {
    Constant(f64),
    Function(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl Source {
    pub fn function<F: Fn(Point) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Source::Function(Arc::new(f))
    }

    pub fn eval(&self, p: Point) -> f64 {
        match self {
            Source::Constant(c) => *c,
            Source::Function(f) => f(p),
        }
    }
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Constant(c) => write!(f, "Constant({c})"),
            Source::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// How the discrete control is parametrized: one value per triangle, or one
/// value per group of triangles.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSpace {
    Cellwise,
    Grouped { group_of_cell: Vec<usize>, num_groups: usize },
}

impl ControlSpace {
    /// `L²`-orthogonal projection onto the control space: area-weighted group means.
    pub fn project(&self, mesh: &Mesh, cellwise: &[f64]) -> Vec<f64> {
        match self {
            ControlSpace::Cellwise => cellwise.to_vec(),
            ControlSpace::Grouped { group_of_cell, num_groups } => {
                let mut sum = vec![0.0; *num_groups];
                let mut area = vec![0.0; *num_groups];
                for (c, &g) in group_of_cell.iter().enumerate() {
                    sum[g] += cellwise[c] * mesh.area(c);
                    area[g] += mesh.area(c);
                }
                group_of_cell.iter().map(|&g| sum[g] / area[g]).collect()
            }
        }
    }

    /// Expands one value per group into a cellwise field.
    pub fn expand(&self, group_values: &[f64]) -> Vec<f64> {
        match self {
            ControlSpace::Cellwise => group_values.to_vec(),
            ControlSpace::Grouped { group_of_cell, .. } => group_of_cell.iter().map(|&g| group_values[g]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Stop when the residual sup-norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { tol: 1e-12, max_iter: 50, max_halvings: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolverSettings {
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolverSettings {
    fn default() -> Self {
        LinearSolverSettings { tol: 1e-12, max_iter: 20_000 }
    }
}

/// Everything needed to evaluate the reduced functional on one mesh.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: Arc<Mesh>,
    pub nonlinearity: Nonlinearity,
    pub source: Source,
    pub tracking: TrackingData,
    pub alpha: f64,
    pub bounds: Bounds,
    pub newton: NewtonSettings,
    pub linear: LinearSolverSettings,
    pub control_space: ControlSpace,
    load: Vec<f64>,
    diracs: Vec<SparseVector>,
}

impl Problem {
    pub fn new(
        mesh: Arc<Mesh>,
        nonlinearity: Nonlinearity,
        source: Source,
        tracking: TrackingData,
        alpha: f64,
        bounds: Bounds,
    ) -> Result<Self> {
        let mut issues = tracking.violations(&mesh);
        if !(alpha > 0.0 && alpha.is_finite()) {
            issues.push(format!("regularization alpha must be positive, got {alpha}"));
        }
        if let Some(x) = (0..mesh.num_triangles())
            .map(|c| mesh.centroid(c))
            .find(|&x| nonlinearity.a0(x) + bounds.lower < 0.0)
        {
            issues.push(format!(
                "a0 + a >= 0 fails: a0 = {} at ({}, {}) with lower bound a = {}",
                nonlinearity.a0(x),
                x.x,
                x.y,
                bounds.lower
            ));
        }
        if !issues.is_empty() {
            return Err(Error::invalid(issues.join("; ")));
        }
        let diracs = tracking
            .points
            .iter()
            .map(|&p| dirac_load_vector(&mesh, p))
            .collect::<Result<Vec<_>>>()?;
        let load = assembly::assemble_load(&mesh, |p| source.eval(p));
        Ok(Problem {
            mesh,
            nonlinearity,
            source,
            tracking,
            alpha,
            bounds,
            newton: NewtonSettings::default(),
            linear: LinearSolverSettings::default(),
            control_space: ControlSpace::Cellwise,
            load,
            diracs,
        })
    }

    pub fn with_newton(mut self, newton: NewtonSettings) -> Self {
        self.newton = newton;
        self
    }

    pub fn with_linear(mut self, linear: LinearSolverSettings) -> Self {
        self.linear = linear;
        self
    }

    pub fn with_control_space(mut self, space: ControlSpace) -> Result<Self> {
        if let ControlSpace::Grouped { group_of_cell, num_groups } = &space {
            if group_of_cell.len() != self.mesh.num_triangles() {
                return Err(Error::invalid("control grouping must assign every triangle"));
            }
            if (0..*num_groups).any(|g| !group_of_cell.contains(&g)) || group_of_cell.iter().any(|&g| g >= *num_groups)
            {
                return Err(Error::invalid("control groups must be 0..num_groups and non-empty"));
            }
        }
        self.control_space = space;
        Ok(self)
    }

    pub fn with_tracking(&self, tracking: TrackingData) -> Result<Self> {
        let mut out = Problem::new(
            self.mesh.clone(),
            self.nonlinearity,
            self.source.clone(),
            tracking,
            self.alpha,
            self.bounds,
        )?;
        out.newton = self.newton;
        out.linear = self.linear;
        out.control_space = self.control_space.clone();
        Ok(out)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// `(f, φ_i)` over all vertices.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// The discrete point functionals of the tracking points, in order.
    pub fn diracs(&self) -> &[SparseVector] {
        &self.diracs
    }

    /// `y(t)` at every tracking point.
    pub fn point_values(&self, y: &NodalField) -> Vec<f64> {
        self.diracs.iter().map(|d| d.dot(&y.values)).collect()
    }

    /// `y(t) − y_t` at every tracking point.
    pub fn mismatches(&self, y: &NodalField) -> Vec<f64> {
        self.point_values(y).iter().zip(&self.tracking.targets).map(|(v, t)| v - t).collect()
    }

    /// Checks `𝚊 ≤ u ≤ 𝚋` and `a₀ + u ≥ 0` cellwise; returns the first violation.
    pub fn check_admissible(&self, u: &ControlField) -> Result<()> {
        if u.len() != self.mesh.num_triangles() {
            return Err(Error::invalid(format!(
                "control has {} values for {} triangles",
                u.len(),
                self.mesh.num_triangles()
            )));
        }
        for (c, &v) in u.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("control is not finite on cell {c}")));
            }
            if v < self.bounds.lower {
                return Err(Error::invalid(format!("control {v} violates lower bound a = {} on cell {c}", self.bounds.lower)));
            }
            if v > self.bounds.upper {
                return Err(Error::invalid(format!("control {v} violates upper bound b = {} on cell {c}", self.bounds.upper)));
            }
        }
        self.check_coercive(u)
    }

    /// Checks only `a₀ + u ≥ 0` cellwise (the set on which the linearized operator is coercive).
    pub fn check_coercive(&self, u: &ControlField) -> Result<()> {
        for (c, &v) in u.values.iter().enumerate() {
            let a0 = self.nonlinearity.a0(self.mesh.centroid(c));
            if a0 + v < 0.0 {
                return Err(Error::invalid(format!("a0 + u = {} < 0 on cell {c}", a0 + v)));
            }
        }
        Ok(())
    }

    /// Midpoint of the box, lifted cellwise into `a₀ + u ≥ 0` and then projected
    /// into the group space.
    pub fn default_initial_control(&self) -> ControlField {
        let mid = 0.5 * (self.bounds.lower + self.bounds.upper);
        let values: Vec<f64> = (0..self.mesh.num_triangles())
            .map(|c| mid.max(-self.nonlinearity.a0(self.mesh.centroid(c))).min(self.bounds.upper))
            .collect();
        ControlField { values: self.control_space.project(&self.mesh, &values) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_structured_mesh, Rectangle};

    fn mesh(n: usize) -> Arc<Mesh> {
        Arc::new(build_structured_mesh(n, Rectangle::UNIT_SQUARE).unwrap())
    }

    #[test]
    fn tracking_validation_lists_every_violation() {
        let m = mesh(4);
        let td = TrackingData::new(
            vec![Point::new(1.0, 0.5), Point::new(0.3, 0.3), Point::new(0.3, 0.3)],
            vec![0.0, 1.0],
        );
        let v = td.violations(&m);
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn bounds_must_be_ordered() {
        assert!(Bounds::new(1.0, 1.0).is_err());
        assert!(Bounds::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn admissibility_names_the_bound() {
        let build = |nl, lower| {
            Problem::new(mesh(2), nl, Source::Constant(1.0), TrackingData::empty(), 1.0, Bounds::new(lower, 2.0).unwrap())
        };
        let err = build(Nonlinearity::Cubic, -0.5).unwrap_err().to_string();
        assert!(err.contains("a0 + a"), "{err}");
        let p = build(Nonlinearity::LinearShift(1.0), -0.5).unwrap();
        let err = p.check_admissible(&ControlField::constant(8, 3.0)).unwrap_err().to_string();
        assert!(err.contains("upper bound"), "{err}");
        let err = p.check_admissible(&ControlField::constant(8, -0.75)).unwrap_err().to_string();
        assert!(err.contains("lower bound"), "{err}");
        assert!(p.check_admissible(&ControlField::constant(8, -0.5)).is_ok());
        assert_eq!(p.default_initial_control().values, vec![0.75; 8]);
    }

    #[test]
    fn grouped_projection_averages() {
        let m = mesh(1);
        let space = ControlSpace::Grouped { group_of_cell: vec![0, 0], num_groups: 1 };
        assert_eq!(space.project(&m, &[1.0, 3.0]), vec![2.0, 2.0]);
        assert_eq!(space.expand(&[5.0]), vec![5.0, 5.0]);
    }
}
