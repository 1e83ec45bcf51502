//! Reduced functional `j(u) = J(S(u), u)`: cost, gradient density, Hessian,
//! box projection and the first/second-order condition checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assembly::{cell_integrals, interpolate};
use crate::error::{Error, Result};
use crate::pde::{solve_state, Linearization};
use crate::problem::{cell_inner, cell_norm, AdjointField, Bounds, ControlField, NodalField, Problem, StateField};

/// `½ Σ_t (y(t) − y_t)² + (α/2)‖u‖²`, with the `L²` norm exact for cellwise `u`.
pub fn eval_cost(problem: &Problem, y: &StateField, u: &ControlField) -> f64 {
    let tracking: f64 = problem.mismatches(y).iter().map(|r| r * r).sum();
    0.5 * tracking + 0.5 * problem.alpha * cell_inner(problem.mesh(), &u.values, &u.values)
}

/// Cell averages `(1/|c|) ∫_c y p`, exact for P1 fields.
pub fn cell_average_product(problem: &Problem, y: &NodalField, p: &NodalField) -> Vec<f64> {
    let mesh = problem.mesh();
    cell_integrals(mesh, |t, qp| {
        interpolate(&mesh.local_values(t, &y.values), &qp.lambda)
            * interpolate(&mesh.local_values(t, &p.values), &qp.lambda)
    })
    .iter()
    .zip(mesh.areas())
    .map(|(i, a)| i / a)
    .collect()
}

/// Gradient density `𝔭̄_c = α u_c − (1/|c|) ∫_c y p`, so that
/// `j′(u)h = Σ_c 𝔭̄_c h_c |c|` for cellwise `h`.
pub fn reduced_gradient(problem: &Problem, u: &ControlField, y: &StateField, p: &AdjointField) -> Vec<f64> {
    cell_average_product(problem, y, p)
        .iter()
        .zip(&u.values)
        .map(|(yp, u)| problem.alpha * u - yp)
        .collect()
}

/// State, adjoint, cost and gradient density at one control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub u: ControlField,
    pub y: StateField,
    pub p: AdjointField,
    pub cost: f64,
    pub pbar: Vec<f64>,
    pub newton_iterations: usize,
}

/// Solves state and adjoint and evaluates `j` and `𝔭̄`.
pub fn evaluate(problem: &Problem, u: &ControlField) -> Result<Evaluation> {
    let state = solve_state(problem, u)?;
    let lin = Linearization::new(problem, u, &state.y)?;
    let p = lin.adjoint()?;
    let cost = eval_cost(problem, &state.y, u);
    let pbar = reduced_gradient(problem, u, &state.y, &p);
    Ok(Evaluation { u: u.clone(), y: state.y, p, cost, pbar, newton_iterations: state.iterations })
}

/// `j(u)` alone.
pub fn reduced_cost(problem: &Problem, u: &ControlField) -> Result<f64> {
    let state = solve_state(problem, u)?;
    Ok(eval_cost(problem, &state.y, u))
}

/// `∫ (α h₂ − z₂ p − y η₂) h₁`, given the linearization at `u` and `p = Φ(u)`.
pub fn hessian_pair_with(lin: &Linearization<'_>, p: &AdjointField, h1: &ControlField, h2: &ControlField) -> Result<f64> {
    let problem = lin.problem();
    let mesh = problem.mesh();
    let z2 = lin.linearized_state(h2)?;
    let eta2 = lin.adjoint_sensitivity(p, h2, &z2)?;
    let y = &lin.state().values;
    let integrals = cell_integrals(mesh, |t, qp| {
        let zq = interpolate(&mesh.local_values(t, &z2.values), &qp.lambda);
        let pq = interpolate(&mesh.local_values(t, &p.values), &qp.lambda);
        let yq = interpolate(&mesh.local_values(t, y), &qp.lambda);
        let eq = interpolate(&mesh.local_values(t, &eta2.values), &qp.lambda);
        problem.alpha * h2.values[t] - zq * pq - yq * eq
    });
    Ok(integrals.iter().zip(&h1.values).map(|(i, h)| i * h).sum())
}

/// `j″(u)(h₁, h₂)`.
pub fn hessian_pair(problem: &Problem, u: &ControlField, h1: &ControlField, h2: &ControlField) -> Result<f64> {
    let state = solve_state(problem, u)?;
    let lin = Linearization::new(problem, u, &state.y)?;
    let p = lin.adjoint()?;
    hessian_pair_with(&lin, &p, h1, h2)
}

/// `Π_[a,b](v) = min{b, max{a, v}}` cellwise.
pub fn project_box(v: &[f64], lower: f64, upper: f64) -> Result<Vec<f64>> {
    if !(lower < upper) {
        return Err(Error::invalid(format!("projection needs a < b, got [{lower}, {upper}]")));
    }
    Ok(v.iter().map(|&x| upper.min(lower.max(x))).collect())
}

/// `Π_[a,b](α⁻¹ · cellavg(y p))`, averaged into the problem's control space.
pub fn projected_control(problem: &Problem, y: &StateField, p: &AdjointField) -> Vec<f64> {
    let yp = problem.control_space.project(problem.mesh(), &cell_average_product(problem, y, p));
    let scaled: Vec<f64> = yp.iter().map(|v| v / problem.alpha).collect();
    project_box(&scaled, problem.bounds.lower, problem.bounds.upper).expect("bounds are validated at construction")
}

/// `‖u − Π(α⁻¹ cellavg(y p))‖_{L²}`, zero exactly at discrete stationary points.
pub fn stationarity_residual(problem: &Problem, u: &ControlField, y: &StateField, p: &AdjointField) -> f64 {
    let target = projected_control(problem, y, p);
    let diff: Vec<f64> = u.values.iter().zip(&target).map(|(a, b)| a - b).collect();
    cell_norm(problem.mesh(), &diff)
}

/// A state/adjoint/control triple with its gradient density `𝔭̄ = αu − yp`.
#[derive(Debug, Clone)]
pub struct KktTriple {
    pub u: ControlField,
    pub y: StateField,
    pub p: AdjointField,
    pub pbar: Vec<f64>,
}

impl KktTriple {
    pub fn from_problem(problem: &Problem, u: &ControlField, y: &StateField, p: &AdjointField) -> Self {
        let pbar = problem.control_space.project(problem.mesh(), &reduced_gradient(problem, u, y, p));
        KktTriple { u: u.clone(), y: y.clone(), p: p.clone(), pbar }
    }
}

/// Where a cell sits relative to the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    AtLower,
    AtUpper,
    Interior,
}

fn bound_status(u: f64, bounds: Bounds, tol: f64) -> BoundStatus {
    if (u - bounds.lower).abs() <= tol {
        BoundStatus::AtLower
    } else if (u - bounds.upper).abs() <= tol {
        BoundStatus::AtUpper
    } else {
        BoundStatus::Interior
    }
}

/// Violation counts of the cellwise sign conditions
/// `𝔭̄ ≥ 0` at `𝚊`, `𝔭̄ ≤ 0` at `𝚋`, `𝔭̄ = 0` strictly inside.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderReport {
    pub tol: f64,
    pub status: Vec<BoundStatus>,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub interior_violations: usize,
    /// Largest violation magnitude over all cells.
    pub worst: f64,
}

impl FirstOrderReport {
    pub fn violations(&self) -> usize {
        self.lower_violations + self.upper_violations + self.interior_violations
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

/// Checks the sign conditions on `triple.pbar` with tolerance `tol`; a cell is
/// at a bound when within `tol` of it.
pub fn check_first_order(triple: &KktTriple, bounds: Bounds, tol: f64) -> FirstOrderReport {
    let mut report = FirstOrderReport {
        tol,
        status: Vec::with_capacity(triple.u.len()),
        lower_violations: 0,
        upper_violations: 0,
        interior_violations: 0,
        worst: 0.0,
    };
    for (&u, &g) in triple.u.values.iter().zip(&triple.pbar) {
        let status = bound_status(u, bounds, tol);
        let violation = match status {
            BoundStatus::AtLower => (-g).max(0.0),
            BoundStatus::AtUpper => g.max(0.0),
            BoundStatus::Interior => g.abs(),
        };
        report.worst = report.worst.max(violation);
        if violation > tol {
            match status {
                BoundStatus::AtLower => report.lower_violations += 1,
                BoundStatus::AtUpper => report.upper_violations += 1,
                BoundStatus::Interior => report.interior_violations += 1,
            }
        }
        report.status.push(status);
    }
    report
}

/// Cell classification in the critical cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeClass {
    /// No sign restriction.
    Free,
    /// `u = 𝚊`: directions must satisfy `h ≥ 0`.
    AtLowerSignConstrained,
    /// `u = 𝚋`: directions must satisfy `h ≤ 0`.
    AtUpperSignConstrained,
    /// `|𝔭̄| > τ`: directions vanish.
    ForcedZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalConeMask {
    pub classes: Vec<ConeClass>,
    pub tau: f64,
}

impl CriticalConeMask {
    pub fn is_empty_cone(&self) -> bool {
        self.classes.iter().all(|c| *c == ConeClass::ForcedZero)
    }

    /// Maps a raw direction into the cone: zero forced cells, clip signs.
    pub fn apply(&self, h: &mut [f64]) {
        for (v, class) in h.iter_mut().zip(&self.classes) {
            match class {
                ConeClass::Free => {}
                ConeClass::AtLowerSignConstrained => *v = v.max(0.0),
                ConeClass::AtUpperSignConstrained => *v = v.min(0.0),
                ConeClass::ForcedZero => *v = 0.0,
            }
        }
    }
}

/// Cone `C^τ`: forced zero where `|𝔭̄| > τ`, sign-constrained at active bounds.
/// `τ = 0` gives the cone `C`: stationarity makes `𝔭̄` vanish off the bounds,
/// so only cells at a bound with `|𝔭̄| > 1e-12` are forced to zero there and
/// the round-off left in `𝔭̄` on interior cells is ignored.
pub fn build_critical_cone_mask(u: &ControlField, pbar: &[f64], bounds: Bounds, tau: f64) -> Result<CriticalConeMask> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("cone tolerance must be nonnegative, got {tau}")));
    }
    let threshold = if tau == 0.0 { 1e-12 } else { tau };
    let bound_tol = 1e-12 * (bounds.upper - bounds.lower).abs().max(1.0);
    let classes = u
        .values
        .iter()
        .zip(pbar)
        .map(|(&u, &g)| {
            let status = bound_status(u, bounds, bound_tol);
            let interior_exact = tau == 0.0 && status == BoundStatus::Interior;
            if g.abs() > threshold && !interior_exact {
                return ConeClass::ForcedZero;
            }
            match status {
                BoundStatus::AtLower => ConeClass::AtLowerSignConstrained,
                BoundStatus::AtUpper => ConeClass::AtUpperSignConstrained,
                BoundStatus::Interior => ConeClass::Free,
            }
        })
        .collect();
    Ok(CriticalConeMask { classes, tau })
}

/// Result of sampling `j″(u)h²` over unit-norm cone directions.
#[derive(Debug, Clone)]
pub struct SecondOrderSample {
    /// `None` when the cone is `{0}` (vacuous pass).
    pub min_value: Option<f64>,
    pub argmin: Option<ControlField>,
    pub samples: usize,
}

impl SecondOrderSample {
    pub fn is_vacuous(&self) -> bool {
        self.min_value.is_none()
    }

    /// Sampled necessary condition `min j″(u)h² ≥ 0` (vacuously true on `{0}`).
    pub fn nonnegative(&self) -> bool {
        self.min_value.is_none_or(|m| m >= 0.0)
    }
}

/// Draws `n_samples` Gaussian directions, maps them into the cone and into the
/// control space, normalizes in `L²`, and returns the smallest `j″(u)(h, h)`.
/// Deterministic for a fixed seed.
pub fn sample_second_order(
    problem: &Problem,
    u: &ControlField,
    mask: &CriticalConeMask,
    n_samples: usize,
    seed: u64,
) -> Result<SecondOrderSample> {
    if n_samples == 0 {
        return Err(Error::invalid("second-order sampling needs at least one sample"));
    }
    if mask.is_empty_cone() {
        return Ok(SecondOrderSample { min_value: None, argmin: None, samples: 0 });
    }
    let mesh = problem.mesh();
    let state = solve_state(problem, u)?;
    let lin = Linearization::new(problem, u, &state.y)?;
    let p = lin.adjoint()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, ControlField)> = None;
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < n_samples {
        attempts += 1;
        let mut h: Vec<f64> = (0..mesh.num_triangles()).map(|_| StandardNormal.sample(&mut rng)).collect();
        mask.apply(&mut h);
        let mut h = problem.control_space.project(mesh, &h);
        mask.apply(&mut h);
        let norm = cell_norm(mesh, &h);
        if norm == 0.0 {
            if attempts > 100 * n_samples {
                return Ok(SecondOrderSample { min_value: None, argmin: None, samples: 0 });
            }
            continue;
        }
        h.iter_mut().for_each(|v| *v /= norm);
        let h = ControlField { values: h };
        let value = hessian_pair_with(&lin, &p, &h, &h)?;
        drawn += 1;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, h));
        }
    }
    let (value, h) = best.expect("at least one sample drawn");
    Ok(SecondOrderSample { min_value: Some(value), argmin: Some(h), samples: drawn })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_cases() {
        let v = project_box(&[0.5, -3.0, 7.0], 0.0, 1.0).unwrap();
        assert_eq!(v, vec![0.5, 0.0, 1.0]);
        // additive form v + max{0, a − v} − max{0, v − b}
        let additive = |v: f64| v + (0.0 - v).max(0.0) - (v - 1.0).max(0.0);
        assert_eq!(additive(-3.0), 0.0);
        assert!(project_box(&[1.0], 1.0, 1.0).is_err());
    }

    fn triple(u: Vec<f64>, pbar: Vec<f64>) -> KktTriple {
        KktTriple {
            u: ControlField { values: u },
            y: NodalField::zeros(1),
            p: NodalField::zeros(1),
            pbar,
        }
    }

    #[test]
    fn first_order_counts_constructed_violation() {
        let b = Bounds::new(0.0, 1.0).unwrap();
        let t = triple(vec![0.0, 0.5, 1.0, 0.0], vec![1.0, 0.0, -2.0, -0.1]);
        let r = check_first_order(&t, b, 1e-6);
        assert_eq!(r.violations(), 1);
        assert_eq!(r.lower_violations, 1);
        assert!(!r.passed());
        let ok = check_first_order(&triple(vec![0.5; 3], vec![0.0; 3]), b, 1e-9);
        assert!(ok.passed());
        assert!(ok.status.iter().all(|s| *s == BoundStatus::Interior));
    }

    #[test]
    fn cone_classification() {
        let b = Bounds::new(0.0, 1.0).unwrap();
        let u = ControlField { values: vec![0.5, 0.0, 1.0, 0.5, 0.0] };
        let pbar = vec![0.0, 0.05, -0.05, 0.2, 0.3];
        let m = build_critical_cone_mask(&u, &pbar, b, 0.1).unwrap();
        assert_eq!(
            m.classes,
            vec![
                ConeClass::Free,
                ConeClass::AtLowerSignConstrained,
                ConeClass::AtUpperSignConstrained,
                ConeClass::ForcedZero,
                ConeClass::ForcedZero
            ]
        );
        let exact = build_critical_cone_mask(&u, &pbar, b, 0.0).unwrap();
        assert_eq!(exact.classes[1], ConeClass::ForcedZero);
        // interior residue in the gradient does not shrink the exact cone
        assert_eq!(exact.classes[3], ConeClass::Free);
        assert!(build_critical_cone_mask(&u, &pbar, b, -1.0).is_err());
        let mut h = vec![-1.0, -1.0, 1.0, 1.0, 1.0];
        m.apply(&mut h);
        assert_eq!(h, vec![-1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
