//! Subcommand implementations. Each writes its artifacts into the output
//! directory and finishes with `summary.txt`.

use std::path::Path;

use pointwise_ocp::control::{check_first_order, BoundStatus, FirstOrderReport};
use pointwise_ocp::diagnostics::{
    adjoint_singularity_fit, admissible_direction, control_regularity_probe, fd_gradient_check, fd_hessian_check,
    manufactured_convergence_study, stability_probe, FdCheck,
};
use pointwise_ocp::io::VtkFields;
use pointwise_ocp::pde::Linearization;
use pointwise_ocp::{
    build_critical_cone_mask, hessian_pair, projected_gradient_solve, sample_second_order, solve_state, OptimizationReport,
    Problem,
};

use crate::config::{DomainConfig, ProblemConfig};
use crate::output::{num, Csv, OutputDir, Summary};
use crate::{CliError, Command};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub quiet: bool,
}

struct Context<'a> {
    config: &'a ProblemConfig,
    out: OutputDir,
    summary: Summary,
    quiet: bool,
}

impl Context<'_> {
    fn progress(&self, message: &str) {
        if !self.quiet {
            println!("{message}");
        }
    }

    fn finish(mut self) -> Result<(), CliError> {
        let text = self.summary.text().to_string();
        self.out.write("summary.txt", &text)?;
        if !self.quiet {
            for path in self.out.written() {
                println!("wrote {}", path.display());
            }
        }
        Ok(())
    }
}

fn core<T>(operation: &'static str, r: pointwise_ocp::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::core(operation, e))
}

/// Runs one subcommand on a validated configuration.
pub fn run(command: Command, config: &ProblemConfig, out_dir: &Path, options: RunOptions) -> Result<(), CliError> {
    let mut ctx = Context { config, out: OutputDir::create(out_dir)?, summary: Summary::default(), quiet: options.quiet };
    ctx.summary.section("run").entry("command", command.name());
    describe_problem(&mut ctx);
    let outcome = match command {
        Command::SolveState => solve_state_cmd(&mut ctx),
        Command::SolveAdjoint => solve_adjoint_cmd(&mut ctx),
        Command::Optimize => optimize_cmd(&mut ctx),
        Command::CheckGradient => check_cmd(&mut ctx, false),
        Command::CheckHessian => check_cmd(&mut ctx, true),
        Command::Convergence => convergence_cmd(&mut ctx),
        Command::Diagnose => diagnose_cmd(&mut ctx),
    };
    if let Err(e) = &outcome {
        ctx.summary.section("failure").entry("error", e.to_string().replace('\n', " "));
    }
    ctx.finish()?;
    outcome
}

fn describe_problem(ctx: &mut Context) {
    let c = ctx.config;
    let s = &mut ctx.summary;
    s.section("problem");
    match &c.domain {
        DomainConfig::Rectangle(r) => s.floats("rectangle", r),
        DomainConfig::MeshFile(p) => s.entry("mesh_file", p.display()),
    };
    s.entry("mesh_n", c.mesh_n)
        .entry("nonlinearity", &c.nonlinearity.label)
        .float("alpha", c.alpha)
        .floats("bounds", &c.bounds)
        .entry("tracking_points", c.tracking.len())
        .entry("seed", c.optimizer.seed);
}

fn state_section(ctx: &mut Context, problem: &Problem, iterations: usize, history: &[f64]) -> Result<(), CliError> {
    let mut csv = Csv::new(&["iteration", "residual"]);
    for (k, r) in history.iter().enumerate() {
        csv.row(&[k.to_string(), num(*r)]);
    }
    ctx.summary
        .section("state")
        .entry("vertices", problem.mesh().num_vertices())
        .entry("triangles", problem.mesh().num_triangles())
        .float("h_max", problem.mesh().h_max())
        .entry("newton_iterations", iterations)
        .float("final_residual", *history.last().unwrap_or(&0.0));
    ctx.out.write_csv("newton.csv", &csv)
}

fn solve_state_cmd(ctx: &mut Context) -> Result<(), CliError> {
    let problem = ctx.config.problem()?;
    let u = ctx.config.fixed_control(&problem);
    ctx.progress("solving state equation");
    let state = core("solve_state", solve_state(&problem, &u))?;
    state_section(ctx, &problem, state.iterations, &state.residual_history)?;
    ctx.summary
        .float("max_abs_y", state.y.max_abs())
        .floats("y_at_tracking_points", &problem.point_values(&state.y));
    let fields = VtkFields::default().point("y", &state.y.values).cell("u", &u.values);
    ctx.out.write_vtk("state.vtk", problem.mesh(), &fields, "state")
}

fn solve_adjoint_cmd(ctx: &mut Context) -> Result<(), CliError> {
    let problem = ctx.config.problem()?;
    let u = ctx.config.fixed_control(&problem);
    ctx.progress("solving state and adjoint equations");
    let state = core("solve_state", solve_state(&problem, &u))?;
    let lin = core("Linearization::new", Linearization::new(&problem, &u, &state.y))?;
    let p = core("solve_adjoint", lin.adjoint())?;
    state_section(ctx, &problem, state.iterations, &state.residual_history)?;
    let mismatches = problem.mismatches(&state.y);
    ctx.summary
        .section("adjoint")
        .floats("mismatches", &mismatches)
        .entry("active_points", mismatches.iter().filter(|r| r.abs() > 1e-12).count())
        .float("max_abs_p", p.max_abs());
    let fields = VtkFields::default().point("y", &state.y.values).point("p", &p.values).cell("u", &u.values);
    ctx.out.write_vtk("adjoint.vtk", problem.mesh(), &fields, "state and adjoint")
}

fn report_csv(report: &OptimizationReport) -> Csv {
    let mut csv = Csv::new(&["iteration", "j", "residual", "step"]);
    for r in &report.iterations {
        csv.row(&[r.iteration.to_string(), num(r.cost), num(r.residual), num(r.step)]);
    }
    csv
}

fn first_order_section(ctx: &mut Context, fo: &FirstOrderReport) {
    let count = |s: BoundStatus| fo.status.iter().filter(|&&x| x == s).count();
    ctx.summary
        .section("first_order")
        .float("tol", fo.tol)
        .entry("cells_at_lower", count(BoundStatus::AtLower))
        .entry("cells_at_upper", count(BoundStatus::AtUpper))
        .entry("cells_interior", count(BoundStatus::Interior))
        .entry("lower_violations", fo.lower_violations)
        .entry("upper_violations", fo.upper_violations)
        .entry("interior_violations", fo.interior_violations)
        .float("worst_violation", fo.worst)
        .entry("passed", fo.passed());
}

/// Optimizes, writes report, fields and the first-order check. Returns the
/// report even when the optimizer did not converge.
fn optimize_and_report(ctx: &mut Context, problem: &Problem) -> Result<OptimizationReport, CliError> {
    let config = ctx.config.optimizer_config();
    ctx.progress("running projected gradient");
    let report = match projected_gradient_solve(problem, &config) {
        Ok(r) => r,
        Err(e) => {
            if let pointwise_ocp::Error::Optimization { iteration, last_control, .. } = &e {
                let mut csv = Csv::new(&["cell", "u"]);
                for (c, v) in last_control.iter().enumerate() {
                    csv.row(&[c.to_string(), num(*v)]);
                }
                ctx.out.write_csv("failed_control.csv", &csv)?;
                ctx.summary.section("optimizer").entry("failed_at_iteration", iteration);
            }
            return Err(CliError::core("projected_gradient_solve", e));
        }
    };
    ctx.out.write_csv("report.csv", &report_csv(&report))?;
    let t = &report.triple;
    let fields = VtkFields::default()
        .point("y", &t.y.values)
        .point("p", &t.p.values)
        .cell("u", &t.u.values)
        .cell("pbar", &t.pbar);
    ctx.out.write_vtk("fields.vtk", problem.mesh(), &fields, "optimal control")?;
    ctx.summary
        .section("optimizer")
        .entry("converged", report.converged)
        .entry("outer_iterations", report.outer_iterations())
        .entry("start", report.start)
        .float("j", report.cost)
        .float("stationarity_residual", report.residual)
        .float("stop_tol", config.stop_tol);
    let fo = check_first_order(t, problem.bounds, 10.0 * config.stop_tol);
    let mut kkt = Csv::new(&["cell", "u", "pbar", "status"]);
    for (c, ((u, g), s)) in t.u.values.iter().zip(&t.pbar).zip(&fo.status).enumerate() {
        let status = match s {
            BoundStatus::AtLower => "lower",
            BoundStatus::AtUpper => "upper",
            BoundStatus::Interior => "interior",
        };
        kkt.row(&[c.to_string(), num(*u), num(*g), status.to_string()]);
    }
    ctx.out.write_csv("kkt.csv", &kkt)?;
    first_order_section(ctx, &fo);
    Ok(report)
}

fn second_order_section(ctx: &mut Context, problem: &Problem, report: &OptimizationReport) -> Result<(), CliError> {
    let d = &ctx.config.diagnostics;
    let t = &report.triple;
    let mask = core("build_critical_cone_mask", build_critical_cone_mask(&t.u, &t.pbar, problem.bounds, d.cone_tau))?;
    ctx.progress("sampling second-order condition");
    let sample = core(
        "sample_second_order",
        sample_second_order(problem, &t.u, &mask, d.second_order_samples, ctx.config.optimizer.seed),
    )?;
    let s = ctx.summary.section("second_order");
    s.float("tau", d.cone_tau).entry("samples", sample.samples);
    match sample.min_value {
        Some(m) => s.float("min_sampled_curvature", m).entry("nonnegative", m >= 0.0),
        None => s.entry("min_sampled_curvature", "none (cone is {0})").entry("nonnegative", "vacuous"),
    };
    Ok(())
}

fn optimize_cmd(ctx: &mut Context) -> Result<(), CliError> {
    let problem = ctx.config.problem()?;
    let report = optimize_and_report(ctx, &problem)?;
    if !report.converged {
        return Err(CliError::NotConverged {
            operation: "projected_gradient_solve",
            detail: format!("residual {} after {} iterations", num(report.residual), report.outer_iterations()),
        });
    }
    second_order_section(ctx, &problem, &report)
}

fn fd_csv(check: &FdCheck) -> Csv {
    let mut csv = Csv::new(&["eps", "analytic", "finite_difference", "relative_error"]);
    for r in &check.rows {
        csv.row(&[num(r.eps), num(r.analytic), num(r.finite_difference), num(r.relative_error)]);
    }
    csv
}

fn fd_section(ctx: &mut Context, name: &str, check: &FdCheck) {
    let s = ctx.summary.section(name);
    s.float("analytic", check.analytic);
    if let Some(best) = check.best() {
        s.float("best_eps", best.eps).float("best_relative_error", best.relative_error);
    }
    s.entry("flagged", !check.passes(1e-4));
    if let Some(order) = check.observed_order(10.0) {
        s.float("observed_order_leading_decade", order);
    }
}

fn check_cmd(ctx: &mut Context, hessian: bool) -> Result<(), CliError> {
    let problem = ctx.config.problem()?;
    let d = &ctx.config.diagnostics;
    let eps = if hessian { d.hessian_eps.clone() } else { d.gradient_eps.clone() };
    let max_eps = eps.iter().copied().fold(0.0, f64::max);
    let u = ctx.config.fixed_control(&problem);
    let seed = ctx.config.optimizer.seed;
    let h = admissible_direction(&problem, &u, max_eps, seed);
    if !hessian {
        ctx.progress("checking reduced gradient");
        let check = core("fd_gradient_check", fd_gradient_check(&problem, &u, &h, &eps))?;
        ctx.out.write_csv("gradient_check.csv", &fd_csv(&check))?;
        fd_section(ctx, "gradient_check", &check);
        return Ok(());
    }
    ctx.progress("checking reduced Hessian");
    let check = core("fd_hessian_check", fd_hessian_check(&problem, &u, &h, &eps))?;
    ctx.out.write_csv("hessian_check.csv", &fd_csv(&check))?;
    fd_section(ctx, "hessian_check", &check);

    let h2 = admissible_direction(&problem, &u, max_eps, seed.wrapping_add(1));
    let a = core("hessian_pair", hessian_pair(&problem, &u, &h, &h2))?;
    let b = core("hessian_pair", hessian_pair(&problem, &u, &h2, &h))?;
    ctx.summary
        .section("hessian_symmetry")
        .float("h1_h2", a)
        .float("h2_h1", b)
        .float("relative_asymmetry", (a - b).abs() / (1.0 + a.abs()));

    let state = core("solve_state", solve_state(&problem, &u))?;
    let lin = core("Linearization::new", Linearization::new(&problem, &u, &state.y))?;
    let p = core("solve_adjoint", lin.adjoint())?;
    let z = core("solve_linearized_state", lin.linearized_state(&h))?;
    let gamma = core("solve_second_sensitivity", lin.second_sensitivity(&h, &h, &z, &z))?;
    let eta = core("solve_adjoint_sensitivity", lin.adjoint_sensitivity(&p, &h, &z))?;
    let fields = VtkFields::default()
        .point("y", &state.y.values)
        .point("p", &p.values)
        .point("z", &z.values)
        .point("gamma", &gamma.values)
        .point("eta", &eta.values)
        .cell("u", &u.values)
        .cell("h", &h.values);
    ctx.out.write_vtk("sensitivities.vtk", problem.mesh(), &fields, "sensitivities along h")
}

fn convergence_cmd(ctx: &mut Context) -> Result<(), CliError> {
    if ctx.config.domain != DomainConfig::default() {
        return Err(CliError::Invalid(vec!["convergence needs the unit-square domain".to_string()]));
    }
    let levels = ctx.config.diagnostics.convergence_levels.clone();
    ctx.progress("running manufactured-solution study");
    let table = core("manufactured_convergence_study", manufactured_convergence_study(&levels, ctx.config.manufactured_case()))?;
    let opt = |r: Option<f64>| r.map(num).unwrap_or_default();
    let mut csv = Csv::new(&["n", "h_max", "error_l2", "error_h1_semi", "rate_l2", "rate_h1"]);
    for r in &table.rows {
        csv.row(&[r.n.to_string(), num(r.h_max), num(r.error_l2), num(r.error_h1_semi), opt(r.rate_l2), opt(r.rate_h1)]);
    }
    ctx.out.write_csv("convergence.csv", &csv)?;
    let s = ctx.summary.section("convergence");
    s.entry("levels", format!("{levels:?}"));
    if let Some((l2, h1)) = table.finest_rates() {
        s.float("finest_rate_l2", l2).float("finest_rate_h1", h1);
    }
    Ok(())
}

/// Geometric radii from half the distance to the boundary down to `2 h_max`.
fn automatic_radii(problem: &Problem, t: pointwise_ocp::Point) -> Vec<f64> {
    let mesh = problem.mesh();
    let mut rho = 0.5 * mesh.distance_to_boundary(t);
    let mut radii = Vec::new();
    while rho >= 2.0 * mesh.h_max() && radii.len() < 6 {
        radii.push(rho);
        rho *= 0.5;
    }
    radii
}

fn diagnose_cmd(ctx: &mut Context) -> Result<(), CliError> {
    let config = ctx.config;
    let problem = config.problem()?;
    let rectangle = matches!(config.domain, DomainConfig::Rectangle(_));
    let levels = config.diagnostics.regularity_levels.clone();

    if rectangle {
        ctx.progress("running stability probe");
        let control = config.control.unwrap_or_else(|| problem.default_initial_control().values[0]);
        let rows = core("stability_probe", stability_probe(&levels, |n| problem_at(config, n), control))?;
        let mut csv = Csv::new(&["n", "max_abs_y", "gradient_l2"]);
        for r in &rows {
            csv.row(&[r.n.to_string(), num(r.sup_norm), num(r.gradient_l2)]);
        }
        ctx.out.write_csv("stability.csv", &csv)?;
    }

    let report = optimize_and_report(ctx, &problem)?;
    if report.converged {
        second_order_section(ctx, &problem, &report)?;
    }

    let t = &report.triple;
    let mismatches = problem.mismatches(&t.y);
    let mut csv = Csv::new(&["point", "radius", "mean_abs_p"]);
    for (k, (&pt, r)) in problem.tracking.points.iter().zip(&mismatches).enumerate() {
        if r.abs() <= 1e-12 {
            continue;
        }
        let radii = config.diagnostics.singularity_radii.clone().unwrap_or_else(|| automatic_radii(&problem, pt));
        let name = format!("singularity_{k}");
        if radii.len() < 2 {
            ctx.summary.section(&name).entry("skipped", "fewer than two admissible radii");
            continue;
        }
        let fit = core("adjoint_singularity_fit", adjoint_singularity_fit(problem.mesh(), &t.p, pt, *r, &radii))?;
        for (rho, m) in fit.radii.iter().zip(&fit.mean_abs) {
            csv.row(&[k.to_string(), num(*rho), num(*m)]);
        }
        ctx.summary
            .section(&name)
            .floats("point", &[pt.x, pt.y])
            .float("mismatch", *r)
            .float("slope", fit.slope)
            .float("reference_slope", fit.reference_slope)
            .float("relative_deviation", fit.relative_deviation())
            .float("fit_residual", fit.fit_residual)
            .floats("radii", &fit.radii)
            .floats("mean_abs_p", &fit.mean_abs);
    }
    ctx.out.write_csv("singularity.csv", &csv)?;

    if rectangle {
        ctx.progress("running control-regularity probe");
        let decay_radii = config.diagnostics.decay_radii.clone();
        let probe = core(
            "control_regularity_probe",
            control_regularity_probe(&levels, |n| problem_at(config, n), &config.optimizer_config(), &decay_radii),
        )?;
        let mut csv = Csv::new(&["n", "h_max", "h1_seminorm", "lipschitz", "converged", "j"]);
        for l in &probe.levels {
            csv.row(&[l.n.to_string(), num(l.h_max), num(l.h1_seminorm), num(l.lipschitz), l.converged.to_string(), num(l.cost)]);
        }
        ctx.out.write_csv("regularity.csv", &csv)?;
        let mut decay = Csv::new(&["point", "radius", "mean_abs_yp"]);
        for d in &probe.decay {
            decay.row(&[d.point_index.to_string(), num(d.radius), num(d.mean_abs_product)]);
        }
        ctx.out.write_csv("decay.csv", &decay)?;
        ctx.summary
            .section("regularity")
            .entry("levels", format!("{levels:?}"))
            .entry("h1_seminorm_bounded", probe.h1_bounded())
            .floats("lipschitz_ratios", &probe.lipschitz_ratios())
            .float("decay_constant", probe.decay_constant)
            .entry("decay_monotone", probe.decay_monotone());
    } else {
        ctx.summary.section("regularity").entry("skipped", "mesh-file domains have no refinement levels");
    }
    if !report.converged {
        return Err(CliError::NotConverged {
            operation: "projected_gradient_solve",
            detail: format!("residual {}", num(report.residual)),
        });
    }
    Ok(())
}

fn problem_at(config: &ProblemConfig, n: usize) -> pointwise_ocp::Result<Problem> {
    config.problem_at(n).map_err(|e| match e {
        CliError::Core { source, .. } => source,
        other => pointwise_ocp::Error::InvalidArgument(other.to_string()),
    })
}
