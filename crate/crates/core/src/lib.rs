//! P1 finite elements and reduced-space optimization for bilinear control of
//! a semilinear elliptic equation with pointwise tracking.
//!
//! The state solves `−Δy + a(·, y) + u y = f` in a polygonal domain with
//! homogeneous Dirichlet data; the cost is
//! `½ Σ_t (y(t) − y_t)² + (α/2)‖u‖²` over cellwise-constant controls in a box.

pub mod assembly;
pub mod control;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod nonlinearity;
pub mod optimizer;
pub mod pde;
pub mod problem;
pub mod quadrature;
pub mod sparse;

pub use control::{
    build_critical_cone_mask, check_first_order, evaluate, hessian_pair, project_box, reduced_cost,
    sample_second_order, stationarity_residual, CriticalConeMask, FirstOrderReport, KktTriple,
};
pub use error::{Error, Result};
pub use geometry::{build_structured_mesh, dirac_load_vector, locate_point, Mesh, Point, Rectangle};
pub use nonlinearity::Nonlinearity;
pub use optimizer::{projected_gradient_from, projected_gradient_solve, OptimizationReport, OptimizerConfig};
pub use pde::{solve_adjoint, solve_state, Linearization, StateSolution};
pub use problem::{Bounds, ControlField, ControlSpace, NodalField, Problem, Source, TrackingData};
