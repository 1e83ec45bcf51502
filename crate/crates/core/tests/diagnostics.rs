mod common;

use std::sync::Arc;

use common::*;
use pointwise_ocp::diagnostics::*;
use pointwise_ocp::*;

#[test]
fn manufactured_cubic_case_converges_at_optimal_rates() {
    let table = manufactured_convergence_study(&[8, 16, 32, 64], ManufacturedCase::CUBIC).unwrap();
    let (l2, h1) = table.finest_rates().unwrap();
    assert!((1.8..=2.2).contains(&l2), "L2 rate {l2}");
    assert!((0.8..=1.2).contains(&h1), "H1 rate {h1}");
    assert!(table.rows.windows(2).all(|w| w[1].error_l2 < w[0].error_l2));
}

#[test]
fn zero_manufactured_solution_is_reproduced() {
    let case = ManufacturedCase { nonlinearity: Nonlinearity::Cubic, control: 1.0, amplitude: 0.0 };
    let table = manufactured_convergence_study(&[4, 8, 16], case).unwrap();
    assert!(table.rows.iter().all(|r| r.error_l2 <= 1e-12 && r.error_h1_semi <= 1e-12));
}

#[test]
fn linear_rates_are_scale_invariant() {
    let base = ManufacturedCase { nonlinearity: Nonlinearity::Zero, control: 0.5, amplitude: 1.0 };
    let scaled = ManufacturedCase { amplitude: 7.5, ..base };
    let a = manufactured_convergence_study(&[4, 8, 16], base).unwrap();
    let b = manufactured_convergence_study(&[4, 8, 16], scaled).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert!((rb.error_l2 / ra.error_l2 - 7.5).abs() <= 1e-9);
        if let (Some(x), Some(y)) = (ra.rate_l2, rb.rate_l2) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn study_rejects_bad_levels_and_annotates_failures() {
    assert!(manufactured_convergence_study(&[8, 16], ManufacturedCase::CUBIC).is_err());
    assert!(manufactured_convergence_study(&[8, 12, 24], ManufacturedCase::CUBIC).is_err());
    let build = |n: usize| -> Result<Problem> {
        let mut p = cubic_problem(n);
        p.newton.max_iter = if n == 8 { 1 } else { 50 };
        Ok(p)
    };
    match stability_probe(&[4, 8], build, 0.5) {
        Err(Error::AtLevel { n: 8, source }) => assert!(source.is_no_convergence()),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn state_bounds_stay_stable_under_refinement() {
    let rows = stability_probe(&[8, 16, 32], cubic_problem_result, 0.5).unwrap();
    let sup: Vec<f64> = rows.iter().map(|r| r.sup_norm).collect();
    assert!(sup.windows(2).all(|w| (w[1] / w[0] - 1.0).abs() < 0.1), "{sup:?}");
}

fn cubic_problem_result(n: usize) -> Result<Problem> {
    Ok(cubic_problem(n))
}

#[test]
fn finite_difference_checks() {
    let problem = cubic_problem(16);
    let nt = problem.mesh().num_triangles();
    let mut r = rng(21);
    let u = random_control(&mut r, nt, 0.5, 1.5);
    let h = random_control(&mut r, nt, -1.0, 1.0);
    let grad = fd_gradient_check(&problem, &u, &h, &[1e-2, 1e-3, 1e-4]).unwrap();
    assert!(grad.passes(1e-5), "{grad:?}");
    let hess = fd_hessian_check(&problem, &u, &h, &[1e-2, 1e-3]).unwrap();
    assert!(hess.passes(1e-3), "{hess:?}");

    let zero = ControlField::constant(nt, 0.0);
    let g0 = fd_gradient_check(&problem, &u, &zero, &[1e-3]).unwrap();
    assert_eq!((g0.analytic, g0.rows[0].finite_difference), (0.0, 0.0));
    let h0 = fd_hessian_check(&problem, &u, &zero, &[1e-3]).unwrap();
    assert_eq!((h0.analytic, h0.rows[0].finite_difference), (0.0, 0.0));
}

#[test]
fn central_difference_error_is_second_order() {
    let problem = cubic_problem(8);
    let nt = problem.mesh().num_triangles();
    let u = ControlField::constant(nt, 1.0);
    let h = ControlField { values: (0..nt).map(|c| 0.5 + 0.5 * (c as f64).sin()).collect() };
    let check = fd_gradient_check(&problem, &u, &h, &[0.5, 0.25, 0.125, 0.0625]).unwrap();
    let order = check.observed_order(10.0).unwrap();
    assert!(order >= 1.8, "{check:?}");
}

#[test]
fn quadratic_functional_has_exact_differences() {
    let problem = Problem::new(
        unit_mesh(6),
        Nonlinearity::Zero,
        Source::Constant(1.0),
        TrackingData::empty(),
        0.5,
        Bounds::new(0.0, 2.0).unwrap(),
    )
    .unwrap();
    let nt = problem.mesh().num_triangles();
    let mut r = rng(2);
    let u = random_control(&mut r, nt, 0.5, 1.5);
    let h = random_control(&mut r, nt, -1.0, 1.0);
    let g = fd_gradient_check(&problem, &u, &h, &[1e-1, 1e-2, 1e-3]).unwrap();
    assert!(g.rows.iter().all(|row| row.relative_error <= 1e-9), "{g:?}");
    let hh = fd_hessian_check(&problem, &u, &h, &[1e-1]).unwrap();
    assert!(hh.rows[0].relative_error <= 1e-9, "{hh:?}");
}

#[test]
fn inadmissible_perturbations_are_named() {
    let problem = cubic_problem(4);
    let nt = problem.mesh().num_triangles();
    let u = ControlField::constant(nt, 1.95);
    let h = ControlField::constant(nt, 1.0);
    let err = fd_gradient_check(&problem, &u, &h, &[0.1]).unwrap_err().to_string();
    assert!(err.contains("upper bound"), "{err}");
}

fn linear_center_problem(n: usize, mismatch: f64) -> Problem {
    Problem::new(
        unit_mesh(n),
        Nonlinearity::Zero,
        Source::Constant(0.0),
        TrackingData::new(vec![Point::new(0.5, 0.5)], vec![-mismatch]),
        1.0,
        Bounds::new(0.0, 1.0).unwrap(),
    )
    .unwrap()
}

fn fit(n: usize, mismatch: f64, radii: &[f64]) -> SingularityFit {
    let problem = linear_center_problem(n, mismatch);
    let u = ControlField::constant(problem.mesh().num_triangles(), 0.0);
    let y = solve_state(&problem, &u).unwrap().y;
    let p = solve_adjoint(&problem, &u, &y).unwrap();
    let r = problem.mismatches(&y)[0];
    adjoint_singularity_fit(problem.mesh(), &p, Point::new(0.5, 0.5), r, radii).unwrap()
}

#[test]
fn adjoint_log_slope_matches_fundamental_solution() {
    let radii = [0.4, 0.2, 0.1];
    let coarse = fit(32, 1.0, &radii);
    let fine = fit(64, 1.0, &radii);
    assert!((coarse.reference_slope - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
    assert!(fine.relative_deviation() <= 0.15, "{fine:?}");
    assert!((fine.slope / coarse.slope - 1.0).abs() <= 0.05);
    let doubled = fit(64, 2.0, &radii);
    assert!((doubled.slope / fine.slope - 2.0).abs() <= 0.04);
}

#[test]
fn singularity_fit_validates_radii() {
    let problem = linear_center_problem(16, 1.0);
    let zero = NodalField::zeros(problem.mesh().num_vertices());
    let t = Point::new(0.5, 0.5);
    let flat = adjoint_singularity_fit(problem.mesh(), &zero, t, 0.0, &[0.3, 0.2]).unwrap();
    assert_eq!(flat.slope, 0.0);
    let err = adjoint_singularity_fit(problem.mesh(), &zero, t, 1.0, &[0.6, 0.2]).unwrap_err().to_string();
    assert!(err.contains("distance"), "{err}");
    assert!(adjoint_singularity_fit(problem.mesh(), &zero, t, 1.0, &[0.3, 0.1]).is_err());
    assert!(adjoint_singularity_fit(problem.mesh(), &zero, t, 1.0, &[0.2, 0.3]).is_err());
}

#[test]
fn regularity_without_tracking_is_trivial() {
    let build = |n: usize| {
        Problem::new(
            Arc::new(build_structured_mesh(n, Rectangle::UNIT_SQUARE)?),
            Nonlinearity::LinearShift(1.0),
            Source::Constant(1.0),
            TrackingData::empty(),
            0.1,
            Bounds::new(-1.0, 1.0)?,
        )
    };
    let report = control_regularity_probe(&[4, 8, 16], build, &OptimizerConfig::default(), &[0.2]).unwrap();
    assert!(report.levels.iter().all(|l| l.h1_seminorm == 0.0 && l.lipschitz == 0.0));
    assert!(report.decay.is_empty());
    assert!(report.h1_bounded());
}

#[test]
fn regularity_indicators_stay_bounded() {
    let report = control_regularity_probe(&[16, 32, 64], cubic_problem_result, &OptimizerConfig::default(), &[0.2, 0.1, 0.05]).unwrap();
    assert!(report.levels.iter().all(|l| l.converged));
    assert!(report.h1_bounded());
    assert!(report.lipschitz_ratios().iter().all(|r| (0.5..=2.0).contains(r)), "{:?}", report.lipschitz_ratios());
    assert_eq!(report.decay.len(), 6);
    assert!(report.decay_constant.is_finite() && report.decay_constant > 0.0);
}
