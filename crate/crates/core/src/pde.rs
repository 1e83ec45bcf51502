//! State, adjoint and sensitivity solves.
//!
//! The state equation is solved by damped Newton. Everything downstream of a
//! state (adjoint `p`, `z = S′(u)h`, `γ = S″(u)h₁h₂`, `η = Φ′(u)h`) shares one
//! symmetric operator `K + M(∂a/∂y(·, y) + u)`, assembled and preconditioned
//! once per [`Linearization`].

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::assembly::{
    assemble_quadrature_load, assemble_semilinear_residual, assemble_stiffness_plus_mass, interpolate,
    linearized_reaction, zero_boundary, Weight,
};
use crate::error::{Error, Result};
use crate::problem::{ControlField, NodalField, Problem, StateField};
use crate::sparse::{solve_direct, SpdSolver};

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Converged state with its Newton history.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub y: StateField,
    pub iterations: usize,
    /// Residual sup-norm before each iteration and after the last one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Builds the symmetric linearized operator with Dirichlet rows eliminated.
fn linearized_solver(problem: &Problem, u: &ControlField, y: &[f64]) -> Result<SpdSolver> {
    let mesh = problem.mesh();
    let reaction = linearized_reaction(mesh, &problem.nonlinearity, y, &u.values)?;
    let op = assemble_stiffness_plus_mass(mesh, Weight::AtQuadrature(&reaction))
        .eliminate_dirichlet(mesh.boundary_flags())
        .into_symmetric()?;
    SpdSolver::new(op)
}

fn solve_with(solver: &SpdSolver, problem: &Problem, rhs: &[f64]) -> Result<Vec<f64>> {
    match solver.solve(rhs, problem.linear.tol, problem.linear.max_iter) {
        Ok(out) => Ok(out.solution),
        Err(e) if e.is_no_convergence() => solve_direct(solver.matrix(), rhs),
        Err(e) => Err(e),
    }
}

/// Solves the semilinear state equation for `u` by Newton's method with
/// residual-norm backtracking, starting from `y = 0`.
pub fn solve_state(problem: &Problem, u: &ControlField) -> Result<StateSolution> {
    problem.check_coercive(u)?;
    let mesh = problem.mesh();
    let nl = &problem.nonlinearity;
    let settings = problem.newton;
    let mut y = vec![0.0; mesh.num_vertices()];
    let mut residual = assemble_semilinear_residual(mesh, nl, &y, &u.values, problem.load())?;
    let mut history = vec![sup_norm(&residual)];
    for iteration in 0..settings.max_iter {
        if sup_norm(&residual) <= settings.tol {
            return Ok(StateSolution { y: NodalField { values: y }, iterations: iteration, residual_history: history, converged: true });
        }
        let solver = linearized_solver(problem, u, &y)?;
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let step = solve_with(&solver, problem, &rhs)?;
        let current = l2_norm(&residual);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial: Vec<f64> = y.iter().zip(&step).map(|(a, d)| a + scale * d).collect();
            let r = assemble_semilinear_residual(mesh, nl, &trial, &u.values, problem.load())?;
            if l2_norm(&r) < current || sup_norm(&r) <= settings.tol {
                accepted = Some((trial, r));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, r)) => {
                y = trial;
                residual = r;
                history.push(sup_norm(&residual));
            }
            None => {
                return Err(Error::NoConvergence {
                    solver: "Newton (damping exhausted)",
                    iterations: iteration + 1,
                    residual: sup_norm(&residual),
                    history,
                });
            }
        }
    }
    let final_residual = sup_norm(&residual);
    if final_residual <= settings.tol {
        return Ok(StateSolution {
            y: NodalField { values: y },
            iterations: settings.max_iter,
            residual_history: history,
            converged: true,
        });
    }
    Err(Error::NoConvergence { solver: "Newton", iterations: settings.max_iter, residual: final_residual, history })
}

/// The operator `K + M(∂a/∂y(·, y) + u)` at one state, shared by all linear
/// solves that follow it.
#[derive(Debug)]
pub struct Linearization<'p> {
    problem: &'p Problem,
    u: ControlField,
    y: StateField,
    solver: SpdSolver,
    solves: AtomicUsize,
}

impl<'p> Linearization<'p> {
    pub fn new(problem: &'p Problem, u: &ControlField, y: &StateField) -> Result<Self> {
        problem.check_coercive(u)?;
        let solver = linearized_solver(problem, u, &y.values)?;
        Ok(Linearization { problem, u: u.clone(), y: y.clone(), solver, solves: AtomicUsize::new(0) })
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn control(&self) -> &ControlField {
        &self.u
    }

    pub fn state(&self) -> &StateField {
        &self.y
    }

    pub fn operator(&self) -> &crate::sparse::SparseMatrix {
        self.solver.matrix()
    }

    /// Number of linear solves performed with this operator.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    fn solve(&self, mut rhs: Vec<f64>) -> Result<NodalField> {
        zero_boundary(self.problem.mesh(), &mut rhs);
        self.solves.fetch_add(1, Ordering::Relaxed);
        Ok(NodalField { values: solve_with(&self.solver, self.problem, &rhs)? })
    }

    /// Right-hand side of the adjoint: `Σ_t (y(t) − y_t) φ_i(t)`.
    pub fn adjoint_load(&self) -> Vec<f64> {
        let mut rhs = vec![0.0; self.problem.mesh().num_vertices()];
        for (d, r) in self.problem.diracs().iter().zip(self.problem.mismatches(&self.y)) {
            d.add_scaled_to(r, &mut rhs);
        }
        rhs
    }

    /// Adjoint state `p`. Exactly zero when every mismatch vanishes.
    pub fn adjoint(&self) -> Result<NodalField> {
        self.solve(self.adjoint_load())
    }

    /// `(h·y, φ_i)` for a cellwise `h`.
    pub fn control_state_load(&self, h: &ControlField) -> Vec<f64> {
        let mesh = self.problem.mesh();
        let y = &self.y.values;
        assemble_quadrature_load(mesh, |t, qp| h.values[t] * interpolate(&mesh.local_values(t, y), &qp.lambda))
    }

    /// `z = S′(u)h`.
    pub fn linearized_state(&self, h: &ControlField) -> Result<NodalField> {
        let rhs = self.control_state_load(h).into_iter().map(|v| -v).collect();
        self.solve(rhs)
    }

    /// `γ = S″(u)h₁h₂` from the two linearized states.
    pub fn second_sensitivity(
        &self,
        h1: &ControlField,
        h2: &ControlField,
        z1: &NodalField,
        z2: &NodalField,
    ) -> Result<NodalField> {
        let mesh = self.problem.mesh();
        let nl = &self.problem.nonlinearity;
        let y = &self.y.values;
        let rhs = assemble_quadrature_load(mesh, |t, qp| {
            let zq1 = interpolate(&mesh.local_values(t, &z1.values), &qp.lambda);
            let zq2 = interpolate(&mesh.local_values(t, &z2.values), &qp.lambda);
            let yq = interpolate(&mesh.local_values(t, y), &qp.lambda);
            -(h1.values[t] * zq2 + h2.values[t] * zq1) - nl.dyy(qp.point, yq) * zq1 * zq2
        });
        self.solve(rhs)
    }

    /// `η = Φ′(u)h`, with `p = Φ(u)` and `z = S′(u)h`.
    pub fn adjoint_sensitivity(&self, p: &NodalField, h: &ControlField, z: &NodalField) -> Result<NodalField> {
        let mesh = self.problem.mesh();
        let nl = &self.problem.nonlinearity;
        let y = &self.y.values;
        let mut rhs = assemble_quadrature_load(mesh, |t, qp| {
            let zq = interpolate(&mesh.local_values(t, &z.values), &qp.lambda);
            let pq = interpolate(&mesh.local_values(t, &p.values), &qp.lambda);
            let yq = interpolate(&mesh.local_values(t, y), &qp.lambda);
            -(nl.dyy(qp.point, yq) * zq + h.values[t]) * pq
        });
        for d in self.problem.diracs() {
            d.add_scaled_to(d.dot(&z.values), &mut rhs);
        }
        self.solve(rhs)
    }
}

/// Adjoint state for `(u, y)`.
pub fn solve_adjoint(problem: &Problem, u: &ControlField, y: &StateField) -> Result<NodalField> {
    Linearization::new(problem, u, y)?.adjoint()
}

/// `z = S′(u)h`.
pub fn solve_linearized_state(problem: &Problem, u: &ControlField, y: &StateField, h: &ControlField) -> Result<NodalField> {
    Linearization::new(problem, u, y)?.linearized_state(h)
}

/// `γ = S″(u)h₁h₂`.
#[allow(clippy::too_many_arguments)]
pub fn solve_second_sensitivity(
    problem: &Problem,
    u: &ControlField,
    y: &StateField,
    h1: &ControlField,
    h2: &ControlField,
    z1: &NodalField,
    z2: &NodalField,
) -> Result<NodalField> {
    Linearization::new(problem, u, y)?.second_sensitivity(h1, h2, z1, z2)
}

/// `η = Φ′(u)h`.
pub fn solve_adjoint_sensitivity(
    problem: &Problem,
    u: &ControlField,
    y: &StateField,
    p: &NodalField,
    h: &ControlField,
    z: &NodalField,
) -> Result<NodalField> {
    Linearization::new(problem, u, y)?.adjoint_sensitivity(p, h, z)
}
