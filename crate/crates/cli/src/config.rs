//! JSON problem configuration: parsing, exhaustive validation and conversion
//! into a [`Problem`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pointwise_ocp::diagnostics::ManufacturedCase;
use pointwise_ocp::geometry::Mesh;
use pointwise_ocp::io::read_mesh;
use pointwise_ocp::problem::{LinearSolverSettings, NewtonSettings};
use pointwise_ocp::{
    build_structured_mesh, Bounds, ControlField, Nonlinearity, OptimizerConfig, Point, Problem, Rectangle, Source,
    TrackingData,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    /// `[x0, y0, x1, y1]`, meshed with `mesh_n` cells per side.
    Rectangle([f64; 4]),
    /// Plain-text mesh file, relative to the config file.
    MeshFile(PathBuf),
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig::Rectangle([0.0, 0.0, 1.0, 1.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub label: String,
    /// Coefficient of `linear_shift`.
    #[serde(default)]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Constant {
        value: f64,
    },
    /// Forcing whose state (for the given constant control) is `A sin(πx) sin(πy)`.
    ManufacturedSine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        control: f64,
    },
    /// `height · exp(−|x − center|² / (2 width²))`.
    Gaussian {
        center: [f64; 2],
        width: f64,
        height: f64,
    },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Constant { value: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingEntry {
    pub point: [f64; 2],
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        let d = NewtonSettings::default();
        NewtonConfig { tol: d.tol, max_iter: d.max_iter, max_halvings: d.max_halvings }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        let d = LinearSolverSettings::default();
        LinearSolverConfig { tol: d.tol, max_iter: d.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub stop_tol: f64,
    pub max_outer: usize,
    pub initial_step: Option<f64>,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub multistart: usize,
    /// Seeds multistart and every sampling step.
    pub seed: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            stop_tol: d.stop_tol,
            max_outer: d.max_outer,
            initial_step: d.initial_step,
            armijo: d.armijo,
            backtrack: d.backtrack,
            max_backtracks: d.max_backtracks,
            multistart: d.multistart,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Mesh levels of the manufactured-solution study.
    pub convergence_levels: Vec<usize>,
    /// Manufactured state amplitude and constant control of that study.
    pub manufactured_amplitude: f64,
    pub manufactured_control: f64,
    /// Mesh levels of the control-regularity and stability probes.
    pub regularity_levels: Vec<usize>,
    pub gradient_eps: Vec<f64>,
    pub hessian_eps: Vec<f64>,
    /// Radii of the adjoint singularity fit; chosen from the mesh when absent.
    pub singularity_radii: Option<Vec<f64>>,
    pub decay_radii: Vec<f64>,
    /// Directions drawn when sampling the second-order condition.
    pub second_order_samples: usize,
    /// Cone threshold `τ` (0 selects the critical cone itself).
    pub cone_tau: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            convergence_levels: vec![8, 16, 32, 64],
            manufactured_amplitude: 1.0,
            manufactured_control: 1.0,
            regularity_levels: vec![16, 32, 64],
            gradient_eps: vec![1e-2, 1e-3, 1e-4, 1e-5],
            hessian_eps: vec![1e-2, 1e-3, 1e-4],
            singularity_radii: None,
            decay_radii: vec![0.2, 0.1, 0.05],
            second_order_samples: 200,
            cone_tau: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default = "default_mesh_n")]
    pub mesh_n: usize,
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub tracking: Vec<TrackingEntry>,
    pub alpha: f64,
    /// `[a, b]`.
    pub bounds: [f64; 2],
    /// Constant control used by the single-control subcommands; defaults to
    /// the optimizer's starting control.
    #[serde(default)]
    pub control: Option<f64>,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub linear_solver: LinearSolverConfig,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_mesh_n() -> usize {
    16
}

/// Parses JSON text without validating it.
pub fn parse_config_str(text: &str) -> Result<ProblemConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse { line: e.line(), column: e.column(), message: e.to_string() })
}

/// Reads, parses and fully validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ProblemConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut config = parse_config_str(&text)?;
    config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let violations = config.violations()?;
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(CliError::Invalid(violations))
    }
}

fn doubling(levels: &[usize]) -> bool {
    levels.len() >= 3 && levels[0] > 0 && levels.windows(2).all(|w| w[1] == 2 * w[0])
}

impl ProblemConfig {
    pub fn nonlinearity(&self) -> Option<Nonlinearity> {
        Nonlinearity::from_label(&self.nonlinearity.label, self.nonlinearity.c)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            initial_step: o.initial_step,
            armijo: o.armijo,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            stop_tol: o.stop_tol,
            max_outer: o.max_outer,
            multistart: o.multistart,
            seed: o.seed,
        }
    }

    fn mesh_path(&self) -> Option<PathBuf> {
        match &self.domain {
            DomainConfig::MeshFile(p) if p.is_relative() => Some(self.base_dir.join(p)),
            DomainConfig::MeshFile(p) => Some(p.clone()),
            DomainConfig::Rectangle(_) => None,
        }
    }

    /// Mesh for `n` cells per side (ignored for mesh files).
    pub fn mesh(&self, n: usize) -> Result<Mesh, CliError> {
        match (&self.domain, self.mesh_path()) {
            (_, Some(path)) => read_mesh(&path).map_err(|e| match e {
                pointwise_ocp::Error::Io(source) => CliError::Read { path, source },
                other => CliError::core("read_mesh", other),
            }),
            (DomainConfig::Rectangle([x0, y0, x1, y1]), None) => {
                build_structured_mesh(n, Rectangle { x0: *x0, y0: *y0, x1: *x1, y1: *y1 })
                    .map_err(|e| CliError::core("build_structured_mesh", e))
            }
            (DomainConfig::MeshFile(_), None) => unreachable!("mesh files always have a path"),
        }
    }

    fn is_unit_square(&self) -> bool {
        self.domain == DomainConfig::Rectangle([0.0, 0.0, 1.0, 1.0])
    }

    /// Every violated invariant, one message each. Mesh-file read failures
    /// are I/O errors rather than violations.
    pub fn violations(&self) -> Result<Vec<String>, CliError> {
        let mut out = Vec::new();
        let nonlinearity = self.nonlinearity();
        match (&nonlinearity, self.nonlinearity.c) {
            (None, _) => out.push(format!(
                "unknown nonlinearity `{}` (expected zero, cubic, atan or linear_shift)",
                self.nonlinearity.label
            )),
            (Some(Nonlinearity::LinearShift(_)), None) => {
                out.push("nonlinearity linear_shift needs its coefficient `c`".to_string())
            }
            (Some(Nonlinearity::LinearShift(_)), Some(c)) if !c.is_finite() => {
                out.push(format!("nonlinearity coefficient c must be finite, got {c}"))
            }
            (Some(nl), Some(_)) if !matches!(nl, Nonlinearity::LinearShift(_)) => {
                out.push(format!("nonlinearity `{}` takes no coefficient `c`", nl.label()))
            }
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            out.push(format!("alpha must be positive, got {}", self.alpha));
        }
        let [a, b] = self.bounds;
        if !(a.is_finite() && b.is_finite() && a < b) {
            out.push(format!("bounds must satisfy a < b, got [{a}, {b}]"));
        }
        if self.mesh_n == 0 {
            out.push("mesh_n must be at least 1".to_string());
        }
        let rectangle_ok = match self.domain {
            DomainConfig::Rectangle([x0, y0, x1, y1]) => {
                let ok = [x0, y0, x1, y1].iter().all(|v| v.is_finite()) && x0 < x1 && y0 < y1;
                if !ok {
                    out.push(format!("rectangle [{x0}, {y0}, {x1}, {y1}] is degenerate"));
                }
                ok
            }
            DomainConfig::MeshFile(_) => true,
        };
        if let SourceConfig::ManufacturedSine { .. } = self.source {
            if !self.is_unit_square() {
                out.push("source manufactured_sine is only defined on the unit square".to_string());
            }
        }
        if let SourceConfig::Gaussian { width, .. } = self.source {
            if !(width > 0.0) {
                out.push(format!("gaussian source width must be positive, got {width}"));
            }
        }
        if let Some(c) = self.control {
            if !(c >= a && c <= b) {
                out.push(format!("control {c} lies outside the bounds [{a}, {b}]"));
            }
        }
        if !(self.newton.tol > 0.0) || self.newton.max_iter == 0 {
            out.push("newton needs tol > 0 and max_iter >= 1".to_string());
        }
        if !(self.linear_solver.tol > 0.0) || self.linear_solver.max_iter == 0 {
            out.push("linear_solver needs tol > 0 and max_iter >= 1".to_string());
        }
        if self.optimizer.max_outer == 0 {
            out.push("optimizer max_outer must be at least 1".to_string());
        }
        out.extend(self.optimizer_config().violations());
        let d = &self.diagnostics;
        if !doubling(&d.convergence_levels) {
            out.push(format!("convergence_levels must be at least three doubling sizes, got {:?}", d.convergence_levels));
        }
        if d.regularity_levels.is_empty() || d.regularity_levels.contains(&0) {
            out.push(format!("regularity_levels must be non-empty and positive, got {:?}", d.regularity_levels));
        }
        for (name, list) in [("gradient_eps", &d.gradient_eps), ("hessian_eps", &d.hessian_eps), ("decay_radii", &d.decay_radii)] {
            if list.is_empty() || list.iter().any(|e| !(*e > 0.0)) {
                out.push(format!("{name} must be a non-empty list of positive numbers"));
            }
        }
        if d.second_order_samples == 0 {
            out.push("second_order_samples must be at least 1".to_string());
        }
        if !(d.cone_tau >= 0.0) {
            out.push(format!("cone_tau must be nonnegative, got {}", d.cone_tau));
        }

        if let Some(nl) = nonlinearity {
            // the catalog's a0 does not depend on x, so one sample decides
            let a0 = nl.a0(Point::new(0.0, 0.0));
            if a.is_finite() && a0 + a < 0.0 {
                out.push(format!("admissibility requires a0 + a >= 0, but a0 = {a0} and a = {a}"));
            }
        }
        if rectangle_ok && self.mesh_n > 0 {
            let mesh = self.mesh(self.mesh_n)?;
            let tracking = self.tracking_data();
            out.extend(tracking.violations(&mesh));
        }
        Ok(out)
    }

    pub fn tracking_data(&self) -> TrackingData {
        TrackingData::new(
            self.tracking.iter().map(|t| Point::new(t.point[0], t.point[1])).collect(),
            self.tracking.iter().map(|t| t.target).collect(),
        )
    }

    pub fn source(&self) -> Source {
        match self.source {
            SourceConfig::Constant { value } => Source::Constant(value),
            SourceConfig::ManufacturedSine { amplitude, control } => {
                ManufacturedCase { nonlinearity: self.nonlinearity().unwrap_or(Nonlinearity::Zero), control, amplitude }
                    .forcing()
            }
            SourceConfig::Gaussian { center, width, height } => Source::function(move |p| {
                let r2 = (p.x - center[0]).powi(2) + (p.y - center[1]).powi(2);
                height * (-r2 / (2.0 * width * width)).exp()
            }),
        }
    }

    /// The problem on an `n × n` mesh of the configured domain.
    pub fn problem_at(&self, n: usize) -> Result<Problem, CliError> {
        let mesh = Arc::new(self.mesh(n)?);
        let nl = self.nonlinearity().expect("validated nonlinearity");
        let bounds = Bounds::new(self.bounds[0], self.bounds[1]).map_err(|e| CliError::core("Bounds::new", e))?;
        let problem = Problem::new(mesh, nl, self.source(), self.tracking_data(), self.alpha, bounds)
            .map_err(|e| CliError::core("Problem::new", e))?;
        Ok(problem
            .with_newton(NewtonSettings {
                tol: self.newton.tol,
                max_iter: self.newton.max_iter,
                max_halvings: self.newton.max_halvings,
            })
            .with_linear(LinearSolverSettings { tol: self.linear_solver.tol, max_iter: self.linear_solver.max_iter }))
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        self.problem_at(self.mesh_n)
    }

    /// The fixed control of the single-control subcommands.
    pub fn fixed_control(&self, problem: &Problem) -> ControlField {
        match self.control {
            Some(c) => ControlField::constant(problem.mesh().num_triangles(), c),
            None => problem.default_initial_control(),
        }
    }

    pub fn manufactured_case(&self) -> ManufacturedCase {
        ManufacturedCase {
            nonlinearity: self.nonlinearity().expect("validated nonlinearity"),
            control: self.diagnostics.manufactured_control,
            amplitude: self.diagnostics.manufactured_amplitude,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "nonlinearity": {"label": "cubic"},
        "alpha": 0.01,
        "bounds": [0.0, 2.0],
        "tracking": [{"point": [0.3, 0.4], "target": 0.5}]
    }"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.mesh_n, 16);
        assert_eq!(c.domain, DomainConfig::default());
        assert_eq!(c.optimizer, OptimizerSection::default());
        assert!(c.violations().unwrap().is_empty());
    }

    #[test]
    fn syntax_errors_report_position() {
        let broken = "{\n  \"alpha\": 0.1,\n  \"bounds\": [0, 1\n}";
        match parse_config_str(broken) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"alpha\"", "\"alpah\": 1, \"alpha\"");
        assert!(matches!(parse_config_str(&text), Err(CliError::Parse { .. })));
    }

    #[test]
    fn every_violation_is_listed_once() {
        let text = r#"{
            "nonlinearity": {"label": "cubic"},
            "alpha": -1,
            "bounds": [-0.5, 1.0],
            "tracking": [
                {"point": [1.0, 0.5], "target": 0},
                {"point": [0.2, 0.2], "target": 0},
                {"point": [0.2, 0.2], "target": 1}
            ]
        }"#;
        let v = parse_config_str(text).unwrap().violations().unwrap();
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v.iter().any(|m| m.contains("a0 + a >= 0")));
        assert!(v.iter().any(|m| m.contains("not strictly interior")));
        assert!(v.iter().any(|m| m.contains("coincide")));
        assert!(v.iter().any(|m| m.contains("alpha")));
    }
}
