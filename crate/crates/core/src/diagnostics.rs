//! Numerical probes: manufactured-solution convergence, finite-difference
//! checks of the reduced derivatives, the adjoint's logarithmic point
//! singularity, and boundedness of the optimal control under refinement.
//!
//! Nothing here proves anything; each probe reports sequences, fits and
//! rates that callers compare against explicit tolerances.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_stiffness, interpolate};
use crate::control::{eval_cost, hessian_pair_with, reduced_gradient};
use crate::error::{Error, Result};
use crate::geometry::{build_structured_mesh, Mesh, Point, Rectangle};
use crate::nonlinearity::Nonlinearity;
use crate::optimizer::{projected_gradient_solve, OptimizationReport, OptimizerConfig};
use crate::pde::{solve_state, Linearization};
use crate::problem::{cell_inner, Bounds, ControlField, NodalField, Problem, Source, TrackingData};
use crate::quadrature::quadrature_rule;

fn at_level<T>(n: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::AtLevel { n, source: Box::new(e) })
}

/// Smooth manufactured state `y* = A sin(πx) sin(πy)` on the unit square with
/// constant control `c`; the forcing is `f = 2π² y* + a(y*) + c y*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub nonlinearity: Nonlinearity,
    pub control: f64,
    pub amplitude: f64,
}

impl ManufacturedCase {
    /// Cubic reaction, `u ≡ 1`, unit amplitude.
    pub const CUBIC: ManufacturedCase =
        ManufacturedCase { nonlinearity: Nonlinearity::Cubic, control: 1.0, amplitude: 1.0 };

    pub fn exact(&self, p: Point) -> f64 {
        self.amplitude * (PI * p.x).sin() * (PI * p.y).sin()
    }

    pub fn exact_gradient(&self, p: Point) -> [f64; 2] {
        [
            self.amplitude * PI * (PI * p.x).cos() * (PI * p.y).sin(),
            self.amplitude * PI * (PI * p.x).sin() * (PI * p.y).cos(),
        ]
    }

    pub fn forcing(&self) -> Source {
        let case = *self;
        Source::function(move |p| {
            let y = case.exact(p);
            2.0 * PI * PI * y + case.nonlinearity.value(p, y) + case.control * y
        })
    }

    pub fn problem(&self, n: usize) -> Result<Problem> {
        let mesh = Arc::new(build_structured_mesh(n, Rectangle::UNIT_SQUARE)?);
        let lo = self.control.min(0.0);
        let hi = self.control.max(0.0) + 1.0;
        Problem::new(mesh, self.nonlinearity, self.forcing(), TrackingData::empty(), 1.0, Bounds::new(lo, hi)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h_max: f64,
    pub error_l2: f64,
    pub error_h1_semi: f64,
    /// `log₂(e_prev / e)` against the previous row; `None` on the first row.
    pub rate_l2: Option<f64>,
    pub rate_h1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn finest_rates(&self) -> Option<(f64, f64)> {
        let last = self.rows.last()?;
        Some((last.rate_l2?, last.rate_h1?))
    }
}

/// Observed order between two successive errors of a halving sequence.
pub fn observed_rate(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// `L²` and `H¹`-seminorm errors of a P1 field against an analytic solution,
/// integrated with the degree-3 rule.
pub fn p1_errors<F, G>(mesh: &Mesh, field: &[f64], exact: F, exact_grad: G) -> (f64, f64)
where
    F: Fn(Point) -> f64,
    G: Fn(Point) -> [f64; 2],
{
    let rule = quadrature_rule(3).expect("degree-3 rule exists");
    let (mut l2, mut h1) = (0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let local = mesh.local_values(t, field);
        let grads = mesh.hat_gradients(t);
        let gh = [
            local[0] * grads[0][0] + local[1] * grads[1][0] + local[2] * grads[2][0],
            local[0] * grads[0][1] + local[1] * grads[1][1] + local[2] * grads[2][1],
        ];
        for (lambda, w) in rule.normalized() {
            let x = mesh.map_point(t, lambda);
            let weight = w * mesh.area(t);
            let e = interpolate(&local, lambda) - exact(x);
            let ge = exact_grad(x);
            l2 += weight * e * e;
            h1 += weight * ((gh[0] - ge[0]).powi(2) + (gh[1] - ge[1]).powi(2));
        }
    }
    (l2.sqrt(), h1.sqrt())
}

/// Solves the manufactured problem on each level and tabulates errors and rates.
pub fn manufactured_convergence_study(levels: &[usize], case: ManufacturedCase) -> Result<ConvergenceTable> {
    if levels.len() < 3 {
        return Err(Error::invalid("a convergence study needs at least three levels"));
    }
    if levels.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::invalid(format!("levels must double successively, got {levels:?}")));
    }
    let mut table = ConvergenceTable::default();
    for &n in levels {
        let problem = at_level(n, case.problem(n))?;
        let u = ControlField::constant(problem.mesh().num_triangles(), case.control);
        let state = at_level(n, solve_state(&problem, &u))?;
        let (error_l2, error_h1_semi) =
            p1_errors(problem.mesh(), &state.y.values, |p| case.exact(p), |p| case.exact_gradient(p));
        let (rate_l2, rate_h1) = match table.rows.last() {
            Some(prev) => (
                Some(observed_rate(prev.error_l2, error_l2)),
                Some(observed_rate(prev.error_h1_semi, error_h1_semi)),
            ),
            None => (None, None),
        };
        table.rows.push(ConvergenceRow { n, h_max: problem.mesh().h_max(), error_l2, error_h1_semi, rate_l2, rate_h1 });
    }
    Ok(table)
}

/// Sup-norm and energy of the state per level, for monitoring the a-priori bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub n: usize,
    pub sup_norm: f64,
    pub gradient_l2: f64,
}

pub fn stability_probe<F>(levels: &[usize], build: F, control: f64) -> Result<Vec<StabilityRow>>
where
    F: Fn(usize) -> Result<Problem>,
{
    levels
        .iter()
        .map(|&n| {
            let problem = at_level(n, build(n))?;
            let u = ControlField::constant(problem.mesh().num_triangles(), control);
            let y = at_level(n, solve_state(&problem, &u))?.y;
            let k = assemble_stiffness(problem.mesh());
            Ok(StabilityRow { n, sup_norm: y.max_abs(), gradient_l2: k.bilinear(&y.values, &y.values).sqrt() })
        })
        .collect()
}

/// One row of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdRow {
    pub eps: f64,
    pub analytic: f64,
    pub finite_difference: f64,
    /// `|analytic − fd| / (|analytic| + 1e-14)`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    pub analytic: f64,
    pub rows: Vec<FdRow>,
}

impl FdCheck {
    pub fn best(&self) -> Option<&FdRow> {
        self.rows.iter().min_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }

    /// Whether some `ε` reaches the given relative error.
    pub fn passes(&self, tol: f64) -> bool {
        self.best().is_some_and(|r| r.relative_error <= tol)
    }

    /// Least-squares slope of `log(error)` against `log(ε)` over the rows with
    /// `ε ≥ ε_max / span`, the largest steps being the ones where truncation
    /// dominates round-off. `None` if fewer than two such rows have a nonzero error.
    pub fn observed_order(&self, span: f64) -> Option<f64> {
        let eps_max = self.rows.iter().map(|r| r.eps).fold(0.0, f64::max);
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.eps >= eps_max / span && r.relative_error > 0.0)
            .map(|r| (r.eps.ln(), r.relative_error.ln()))
            .collect();
        least_squares(&pts).map(|(slope, _, _)| slope)
    }
}

fn relative(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (analytic.abs() + 1e-14)
}

fn perturbed(u: &ControlField, h: &ControlField, eps: f64) -> ControlField {
    u.axpy(eps, h)
}

fn check_perturbations(problem: &Problem, u: &ControlField, h: &ControlField, eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::invalid("finite-difference check needs at least one epsilon"));
    }
    problem.check_admissible(u)?;
    for &eps in eps_list {
        for sign in [1.0, -1.0] {
            problem
                .check_admissible(&perturbed(u, h, sign * eps))
                .map_err(|e| Error::invalid(format!("u {} {eps:e}·h is inadmissible: {e}", if sign > 0.0 { "+" } else { "-" })))?;
        }
    }
    Ok(())
}

/// Random direction with entries in `[−1, 1]`, shrunk cellwise so that
/// `u ± ε h` stays in the box for every `ε ≤ max_eps`, then averaged into the
/// problem's control space.
pub fn admissible_direction(problem: &Problem, u: &ControlField, max_eps: f64, seed: u64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Bounds { lower, upper } = problem.bounds;
    let raw: Vec<f64> = u
        .values
        .iter()
        .map(|&v| {
            let room = (v - lower).min(upper - v).max(0.0);
            rng.random_range(-1.0..=1.0) * (0.999 * room / max_eps).min(1.0)
        })
        .collect();
    let values = problem.control_space.project(problem.mesh(), &raw);
    // group averaging can exceed a cell's room only if the room varies inside a group
    let scale = u
        .values
        .iter()
        .zip(&values)
        .filter(|(_, h)| **h != 0.0)
        .map(|(&v, h)| {
            let room = if *h > 0.0 { upper - v } else { v - lower };
            (0.999 * room / (max_eps * h.abs())).min(1.0)
        })
        .fold(1.0, f64::min);
    ControlField { values: values.iter().map(|h| h * scale).collect() }
}

/// Random admissible control with cell values uniform in the box, averaged
/// into the control space.
pub fn random_admissible_control(problem: &Problem, seed: u64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Bounds { lower, upper } = problem.bounds;
    let raw: Vec<f64> = (0..problem.mesh().num_triangles()).map(|_| rng.random_range(lower..=upper)).collect();
    ControlField { values: problem.control_space.project(problem.mesh(), &raw) }
}

/// Compares `j′(u)h = Σ_c 𝔭̄_c h_c |c|` with central differences of `j`.
pub fn fd_gradient_check(problem: &Problem, u: &ControlField, h: &ControlField, eps_list: &[f64]) -> Result<FdCheck> {
    check_perturbations(problem, u, h, eps_list)?;
    let state = solve_state(problem, u)?;
    let p = Linearization::new(problem, u, &state.y)?.adjoint()?;
    let pbar = reduced_gradient(problem, u, &state.y, &p);
    let analytic = cell_inner(problem.mesh(), &pbar, &h.values);
    let cost = |v: &ControlField| -> Result<f64> { Ok(eval_cost(problem, &solve_state(problem, v)?.y, v)) };
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let fd = (cost(&perturbed(u, h, eps))? - cost(&perturbed(u, h, -eps))?) / (2.0 * eps);
        rows.push(FdRow { eps, analytic, finite_difference: fd, relative_error: relative(analytic, fd) });
    }
    Ok(FdCheck { analytic, rows })
}

/// Compares `j″(u)(h, h)` with `(j(u + εh) − 2j(u) + j(u − εh)) / ε²`.
pub fn fd_hessian_check(problem: &Problem, u: &ControlField, h: &ControlField, eps_list: &[f64]) -> Result<FdCheck> {
    check_perturbations(problem, u, h, eps_list)?;
    let state = solve_state(problem, u)?;
    let lin = Linearization::new(problem, u, &state.y)?;
    let p = lin.adjoint()?;
    let analytic = hessian_pair_with(&lin, &p, h, h)?;
    let cost = |v: &ControlField| -> Result<f64> { Ok(eval_cost(problem, &solve_state(problem, v)?.y, v)) };
    let center = eval_cost(problem, &state.y, u);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let fd = (cost(&perturbed(u, h, eps))? - 2.0 * center + cost(&perturbed(u, h, -eps))?) / (eps * eps);
        rows.push(FdRow { eps, analytic, finite_difference: fd, relative_error: relative(analytic, fd) });
    }
    Ok(FdCheck { analytic, rows })
}

/// `(slope, intercept, rms residual)` of a least-squares line; `None` for fewer than two points.
fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Some((slope, intercept, rms))
}

pub const SAMPLE_ANGLES: usize = 16;

/// Mean of `g` over `SAMPLE_ANGLES` equispaced points on the circle of radius `rho` around `t`.
fn circle_mean<F: Fn(Point) -> Result<f64>>(t: Point, rho: f64, g: F) -> Result<f64> {
    let mut sum = 0.0;
    for k in 0..SAMPLE_ANGLES {
        let theta = 2.0 * PI * k as f64 / SAMPLE_ANGLES as f64;
        sum += g(Point::new(t.x + rho * theta.cos(), t.y + rho * theta.sin()))?;
    }
    Ok(sum / SAMPLE_ANGLES as f64)
}

/// Least-squares fit of the circle-averaged `|p|` against `log(1/ρ)` near a tracking point.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularityFit {
    pub point: Point,
    pub radii: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub fit_residual: f64,
    /// `|y(t) − y_t| / (2π)`: the coefficient of the 2D Laplace fundamental solution.
    pub reference_slope: f64,
}

impl SingularityFit {
    pub fn relative_deviation(&self) -> f64 {
        (self.slope - self.reference_slope).abs() / self.reference_slope
    }
}

pub fn adjoint_singularity_fit(mesh: &Mesh, p: &NodalField, t: Point, y_mismatch: f64, radii: &[f64]) -> Result<SingularityFit> {
    if radii.len() < 2 {
        return Err(Error::invalid("singularity fit needs at least two radii"));
    }
    if radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid(format!("radii must be strictly decreasing, got {radii:?}")));
    }
    let min_radius = 2.0 * mesh.h_max();
    if let Some(r) = radii.iter().find(|&&r| r < min_radius) {
        return Err(Error::invalid(format!("radius {r} is below 2·h_max = {min_radius}")));
    }
    let reach = mesh.distance_to_boundary(t);
    if let Some(r) = radii.iter().find(|&&r| r > reach) {
        return Err(Error::invalid(format!("radius {r} exceeds the distance {reach} from the point to the boundary")));
    }
    let mean_abs = radii
        .iter()
        .map(|&rho| circle_mean(t, rho, |x| Ok(mesh.evaluate(&p.values, x)?.abs())))
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = radii.iter().zip(&mean_abs).map(|(r, m)| ((1.0 / r).ln(), *m)).collect();
    let (slope, intercept, fit_residual) = least_squares(&pts).expect("radii are distinct");
    Ok(SingularityFit {
        point: t,
        radii: radii.to_vec(),
        mean_abs,
        slope,
        intercept,
        fit_residual,
        reference_slope: y_mismatch.abs() / (2.0 * PI),
    })
}

/// Nodal interpolant of a cellwise field: area-weighted mean of the adjacent cells.
pub fn nodal_interpolant(mesh: &Mesh, cellwise: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; mesh.num_vertices()];
    let mut weight = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for &v in tri {
            sum[v] += mesh.area(t) * cellwise[t];
            weight[v] += mesh.area(t);
        }
    }
    sum.iter().zip(&weight).map(|(s, w)| s / w).collect()
}

/// `|∇ I_h u|_{L²}` of the nodal interpolant.
pub fn interpolant_h1_seminorm(mesh: &Mesh, cellwise: &[f64]) -> f64 {
    let v = nodal_interpolant(mesh, cellwise);
    assemble_stiffness(mesh).bilinear(&v, &v).max(0.0).sqrt()
}

/// Largest difference quotient `|u_c − u_c'| / |x_c − x_c'|` over adjacent cells
/// whose centroids both lie outside the balls of radius `exclusion` around `centers`.
pub fn lipschitz_quotient(mesh: &Mesh, cellwise: &[f64], centers: &[Point], exclusion: f64) -> f64 {
    let outside = |c: usize| {
        let x = mesh.centroid(c);
        centers.iter().all(|t| t.distance(&x) >= exclusion)
    };
    mesh.adjacent_pairs()
        .into_iter()
        .filter(|&(a, b)| outside(a) && outside(b))
        .map(|(a, b)| (cellwise[a] - cellwise[b]).abs() / mesh.centroid(a).distance(&mesh.centroid(b)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct LevelRegularity {
    pub n: usize,
    pub h_max: f64,
    pub h1_seminorm: f64,
    pub lipschitz: f64,
    pub converged: bool,
    pub cost: f64,
}

/// Circle-averaged `|y p|` at one radius around a point of `ℰ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySample {
    pub point_index: usize,
    pub radius: f64,
    pub mean_abs_product: f64,
}

#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub levels: Vec<LevelRegularity>,
    pub decay: Vec<DecaySample>,
    /// Smallest `C` with `mean |y p| ≤ C ρ (|log ρ| + 1)` over the decay samples.
    pub decay_constant: f64,
    /// Final optimization report on the finest level.
    pub finest: Option<OptimizationReport>,
}

impl RegularityReport {
    /// Whether the last seminorm is at most twice the median of the sequence.
    pub fn h1_bounded(&self) -> bool {
        let mut values: Vec<f64> = self.levels.iter().map(|l| l.h1_seminorm).collect();
        let Some(&last) = values.last() else {
            return true;
        };
        values.sort_by(f64::total_cmp);
        let median = if values.len() % 2 == 1 {
            values[values.len() / 2]
        } else {
            0.5 * (values[values.len() / 2 - 1] + values[values.len() / 2])
        };
        last <= 2.0 * median
    }

    /// Ratios of successive Lipschitz quotients.
    pub fn lipschitz_ratios(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[1].lipschitz / w[0].lipschitz).collect()
    }

    /// Whether the decay samples decrease with the radius, per point.
    pub fn decay_monotone(&self) -> bool {
        let mut ok = true;
        let mut by_point: Vec<Vec<&DecaySample>> = Vec::new();
        for s in &self.decay {
            if by_point.len() <= s.point_index {
                by_point.resize(s.point_index + 1, Vec::new());
            }
            by_point[s.point_index].push(s);
        }
        for samples in by_point {
            let mut sorted = samples;
            sorted.sort_by(|a, b| b.radius.total_cmp(&a.radius));
            ok &= sorted.windows(2).all(|w| w[1].mean_abs_product < w[0].mean_abs_product);
        }
        ok
    }
}

/// Optimizes on every level and collects the regularity indicators of `ū_h`;
/// product-decay samples are taken on the finest level at `decay_radii`.
pub fn control_regularity_probe<F>(
    levels: &[usize],
    build: F,
    config: &OptimizerConfig,
    decay_radii: &[f64],
) -> Result<RegularityReport>
where
    F: Fn(usize) -> Result<Problem>,
{
    let mut out = RegularityReport { levels: Vec::new(), decay: Vec::new(), decay_constant: 0.0, finest: None };
    for &n in levels {
        let problem = at_level(n, build(n))?;
        let report = at_level(n, projected_gradient_solve(&problem, config))?;
        let mesh = problem.mesh();
        let u = &report.triple.u.values;
        let active: Vec<Point> = problem
            .mismatches(&report.triple.y)
            .iter()
            .zip(&problem.tracking.points)
            .filter(|(r, _)| r.abs() > 1e-12)
            .map(|(_, p)| *p)
            .collect();
        out.levels.push(LevelRegularity {
            n,
            h_max: mesh.h_max(),
            h1_seminorm: interpolant_h1_seminorm(mesh, u),
            lipschitz: lipschitz_quotient(mesh, u, &active, 2.0 * mesh.h_max()),
            converged: report.converged,
            cost: report.cost,
        });
        if n == *levels.last().expect("levels non-empty") {
            for (i, (&t, r)) in problem.tracking.points.iter().zip(problem.mismatches(&report.triple.y)).enumerate() {
                if r.abs() <= 1e-12 {
                    continue;
                }
                for &rho in decay_radii {
                    let y = &report.triple.y.values;
                    let p = &report.triple.p.values;
                    let m = circle_mean(t, rho, |x| Ok((mesh.evaluate(y, x)? * mesh.evaluate(p, x)?).abs()))?;
                    out.decay.push(DecaySample { point_index: i, radius: rho, mean_abs_product: m });
                    let bound = rho * (rho.ln().abs() + 1.0);
                    out.decay_constant = out.decay_constant.max(m / bound);
                }
            }
            out.finest = Some(report);
        }
    }
    Ok(out)
}
