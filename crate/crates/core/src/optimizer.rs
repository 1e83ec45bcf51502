//! Projected gradient with Armijo backtracking on the box `[𝚊, 𝚋]`.
//!
//! Steps use the `L²` gradient density `𝔭̄` (averaged into the control space),
//! a Barzilai–Borwein trial length, and monotone Armijo acceptance along the
//! projection arc. Fixed points of the iteration are exactly the discrete
//! stationary points `u = Π(α⁻¹ cellavg(y p))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{evaluate, project_box, stationarity_residual, Evaluation, KktTriple};
use crate::error::{Error, Result};
use crate::problem::{cell_inner, ControlField, Problem};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// First trial step; `None` means `1/α`, the step whose projected update is
    /// the fixed-point map itself.
    pub initial_step: Option<f64>,
    /// Armijo sufficient-decrease parameter in `(0, 1)`.
    pub armijo: f64,
    /// Step reduction factor in `(0, 1)`.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Stop when `‖u − Π(α⁻¹ cellavg(y p))‖_{L²} ≤ stop_tol`.
    pub stop_tol: f64,
    pub max_outer: usize,
    /// Number of starts; start 0 is the default control, the rest are drawn from `seed`.
    pub multistart: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            initial_step: None,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            stop_tol: 1e-8,
            max_outer: 500,
            multistart: 1,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            out.push(format!("Armijo parameter must lie in (0, 1), got {}", self.armijo));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            out.push(format!("backtrack factor must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.stop_tol > 0.0) {
            out.push(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0) {
                out.push(format!("initial step must be positive, got {s}"));
            }
        }
        if self.multistart == 0 {
            out.push("multistart count must be at least 1".to_string());
        }
        out
    }
}

/// One row of the iteration history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub residual: f64,
    /// Accepted step length; zero for the initial row.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterations: Vec<IterationRecord>,
    pub triple: KktTriple,
    pub cost: f64,
    pub residual: f64,
    pub converged: bool,
    /// Start index that produced this report.
    pub start: usize,
}

impl OptimizationReport {
    /// Outer iterations performed (rows after the initial one).
    pub fn outer_iterations(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }
}

fn wrap(iteration: usize, u: &ControlField, e: Error) -> Error {
    Error::Optimization { iteration, last_control: u.values.clone(), source: Box::new(e) }
}

fn single_run(problem: &Problem, config: &OptimizerConfig, start: ControlField, start_index: usize) -> Result<OptimizationReport> {
    let mesh = problem.mesh();
    let space = &problem.control_space;
    let bounds = problem.bounds;
    let base_step = config.initial_step.unwrap_or(1.0 / problem.alpha);
    let mut current: Evaluation = evaluate(problem, &start).map_err(|e| wrap(0, &start, e))?;
    let mut residual = stationarity_residual(problem, &current.u, &current.y, &current.p);
    let mut history = vec![IterationRecord { iteration: 0, cost: current.cost, residual, step: 0.0 }];
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut converged = residual <= config.stop_tol;
    let mut iteration = 0;
    while !converged && iteration < config.max_outer {
        iteration += 1;
        let grad = space.project(mesh, &current.pbar);
        let mut step = match &previous {
            Some((du, dg)) => {
                let curvature = cell_inner(mesh, du, dg);
                if curvature > 0.0 {
                    (cell_inner(mesh, du, du) / curvature).clamp(1e-8 * base_step, 1e4 * base_step)
                } else {
                    base_step
                }
            }
            None => base_step,
        };
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let raw: Vec<f64> = current.u.values.iter().zip(&grad).map(|(u, g)| u - step * g).collect();
            let trial_u = ControlField { values: project_box(&raw, bounds.lower, bounds.upper)? };
            let direction: Vec<f64> = trial_u.values.iter().zip(&current.u.values).map(|(a, b)| a - b).collect();
            let decrease = cell_inner(mesh, &grad, &direction);
            match evaluate(problem, &trial_u) {
                Ok(trial) if trial.cost <= current.cost + config.armijo * decrease => {
                    accepted = Some((trial, direction));
                    break;
                }
                // predicted decrease below cost round-off: accept on stationarity decrease instead
                Ok(trial)
                    if decrease.abs() <= 64.0 * f64::EPSILON * current.cost.abs().max(1e-300)
                        && stationarity_residual(problem, &trial.u, &trial.y, &trial.p) < residual =>
                {
                    accepted = Some((trial, direction));
                    break;
                }
                Ok(_) => {}
                // trial controls stay admissible, so a failed inner solve is treated as a rejected step
                Err(e) if e.is_no_convergence() => {}
                Err(e) => return Err(wrap(iteration, &current.u, e)),
            }
            step *= config.backtrack;
        }
        let Some((trial, du)) = accepted else {
            break;
        };
        let new_grad = space.project(mesh, &trial.pbar);
        let dg: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        previous = Some((du, dg));
        current = trial;
        residual = stationarity_residual(problem, &current.u, &current.y, &current.p);
        history.push(IterationRecord { iteration, cost: current.cost, residual, step });
        converged = residual <= config.stop_tol;
    }
    let triple = KktTriple::from_problem(problem, &current.u, &current.y, &current.p);
    Ok(OptimizationReport { iterations: history, triple, cost: current.cost, residual, converged, start: start_index })
}

/// Random admissible start: one uniform value per control group in
/// `[max(𝚊, −a₀), 𝚋]`.
fn random_start(problem: &Problem, rng: &mut ChaCha8Rng) -> ControlField {
    let mesh = problem.mesh();
    let cellwise: Vec<f64> = (0..mesh.num_triangles()).map(|_| rng.random::<f64>()).collect();
    let shared = problem.control_space.project(mesh, &cellwise);
    let values = shared
        .iter()
        .enumerate()
        .map(|(c, &r)| {
            let lo = problem.bounds.lower.max(-problem.nonlinearity.a0(mesh.centroid(c)));
            lo + r * (problem.bounds.upper - lo)
        })
        .collect();
    ControlField { values }
}

/// Runs projected gradient from every start and keeps the best converged
/// result (lowest cost; ties by start index). If no start converges, the best
/// non-converged report is returned with `converged = false`.
pub fn projected_gradient_solve(problem: &Problem, config: &OptimizerConfig) -> Result<OptimizationReport> {
    let issues = config.violations();
    if !issues.is_empty() {
        return Err(Error::invalid(issues.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<OptimizationReport> = None;
    for start in 0..config.multistart {
        let u0 = if start == 0 { problem.default_initial_control() } else { random_start(problem, &mut rng) };
        problem.check_admissible(&u0)?;
        let report = single_run(problem, config, u0, start)?;
        let better = match &best {
            None => true,
            Some(b) => (report.converged, -report.cost) > (b.converged, -b.cost),
        };
        if better {
            best = Some(report);
        }
    }
    Ok(best.expect("multistart >= 1"))
}

/// Runs from a caller-provided admissible start.
pub fn projected_gradient_from(problem: &Problem, config: &OptimizerConfig, start: ControlField) -> Result<OptimizationReport> {
    let issues = config.violations();
    if !issues.is_empty() {
        return Err(Error::invalid(issues.join("; ")));
    }
    problem.check_admissible(&start)?;
    single_run(problem, config, start, 0)
}
