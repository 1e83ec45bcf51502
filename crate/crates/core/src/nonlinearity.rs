//! The semilinear reaction term `a(x, y)` with its first two `y`-derivatives
//! and the lower bound `a₀(x) ≤ ∂a/∂y(x, y)`.

use std::fmt;

use crate::geometry::Point;

/// Built-in catalog of reaction terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    /// `a ≡ 0`, `a₀ = 0`.
    Zero,
    /// `a = y³`, `a₀ = 0`.
    Cubic,
    /// `a = arctan y`, `a₀ = 0`.
    Atan,
    /// `a = c·y`, `a₀ = c`. With `c < 0` the control bound must satisfy `𝚊 ≥ −c`.
    LinearShift(f64),
}

impl Nonlinearity {
    pub fn from_label(label: &str, parameter: Option<f64>) -> Option<Self> {
        match label {
            "zero" => Some(Nonlinearity::Zero),
            "cubic" => Some(Nonlinearity::Cubic),
            "atan" => Some(Nonlinearity::Atan),
            "linear_shift" => Some(Nonlinearity::LinearShift(parameter.unwrap_or(0.0))),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Nonlinearity::Zero => "zero",
            Nonlinearity::Cubic => "cubic",
            Nonlinearity::Atan => "atan",
            Nonlinearity::LinearShift(_) => "linear_shift",
        }
    }

    pub fn value(&self, _x: Point, y: f64) -> f64 {
        match *self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => y * y * y,
            Nonlinearity::Atan => y.atan(),
            Nonlinearity::LinearShift(c) => c * y,
        }
    }

    pub fn dy(&self, _x: Point, y: f64) -> f64 {
        match *self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => 3.0 * y * y,
            Nonlinearity::Atan => 1.0 / (1.0 + y * y),
            Nonlinearity::LinearShift(c) => c,
        }
    }

    pub fn dyy(&self, _x: Point, y: f64) -> f64 {
        match *self {
            Nonlinearity::Zero | Nonlinearity::LinearShift(_) => 0.0,
            Nonlinearity::Cubic => 6.0 * y,
            Nonlinearity::Atan => -2.0 * y / (1.0 + y * y).powi(2),
        }
    }

    /// Lower bound `a₀(x)` on `∂a/∂y`.
    pub fn a0(&self, _x: Point) -> f64 {
        match *self {
            Nonlinearity::Zero | Nonlinearity::Cubic => 0.0,
            // arctan' = 1/(1+y²) > 0 but has infimum 0
            Nonlinearity::Atan => 0.0,
            Nonlinearity::LinearShift(c) => c,
        }
    }

    /// True when `∂²a/∂y² ≡ 0`.
    pub fn is_affine(&self) -> bool {
        matches!(self, Nonlinearity::Zero | Nonlinearity::LinearShift(_))
    }

    /// Sampled check of the structural assumptions: derivative consistency by
    /// central differences, `∂a/∂y ≥ a₀`, and boundedness of the derivatives
    /// on `|y| ≤ 10`. Returns every violation found.
    pub fn verify_assumptions(&self, xs: &[Point]) -> Vec<String> {
        let mut problems = Vec::new();
        let h = 1e-5;
        let ys: Vec<f64> = (0..=80).map(|k| -10.0 + 0.25 * k as f64).collect();
        let mut max_dy = 0.0f64;
        let mut max_dyy = 0.0f64;
        for &x in xs {
            for &y in &ys {
                let (v, d1, d2) = (self.value(x, y), self.dy(x, y), self.dyy(x, y));
                if !(v.is_finite() && d1.is_finite() && d2.is_finite()) {
                    problems.push(format!("{}: non-finite evaluation at y = {y}", self.label()));
                    continue;
                }
                let fd1 = (self.value(x, y + h) - self.value(x, y - h)) / (2.0 * h);
                if (fd1 - d1).abs() > 1e-6 * d1.abs().max(1.0) {
                    problems.push(format!("{}: ∂a/∂y inconsistent at y = {y} ({d1} vs FD {fd1})", self.label()));
                }
                let fd2 = (self.dy(x, y + h) - self.dy(x, y - h)) / (2.0 * h);
                if (fd2 - d2).abs() > 1e-6 * d2.abs().max(1.0) {
                    problems.push(format!("{}: ∂²a/∂y² inconsistent at y = {y} ({d2} vs FD {fd2})", self.label()));
                }
                if d1 < self.a0(x) {
                    problems.push(format!(
                        "{}: ∂a/∂y = {d1} below a₀ = {} at y = {y}",
                        self.label(),
                        self.a0(x)
                    ));
                }
                max_dy = max_dy.max(d1.abs());
                max_dyy = max_dyy.max(d2.abs());
            }
        }
        if !(max_dy.is_finite() && max_dyy.is_finite()) {
            problems.push(format!("{}: derivatives unbounded on |y| <= 10", self.label()));
        }
        problems
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::LinearShift(c) => write!(f, "linear_shift(c = {c})"),
            other => f.write_str(other.label()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_satisfies_assumptions() {
        let xs = [Point::new(0.1, 0.2), Point::new(0.7, 0.9)];
        for nl in [
            Nonlinearity::Zero,
            Nonlinearity::Cubic,
            Nonlinearity::Atan,
            Nonlinearity::LinearShift(1.5),
            Nonlinearity::LinearShift(-0.5),
        ] {
            let issues = nl.verify_assumptions(&xs);
            assert!(issues.is_empty(), "{nl}: {issues:?}");
        }
    }

    #[test]
    fn labels_round_trip() {
        for nl in [Nonlinearity::Zero, Nonlinearity::Cubic, Nonlinearity::Atan, Nonlinearity::LinearShift(2.0)] {
            let param = match nl {
                Nonlinearity::LinearShift(c) => Some(c),
                _ => None,
            };
            assert_eq!(Nonlinearity::from_label(nl.label(), param), Some(nl));
        }
        assert_eq!(Nonlinearity::from_label("quartic", None), None);
    }

    #[test]
    fn a0_bounds() {
        let x = Point::new(0.5, 0.5);
        assert_eq!(Nonlinearity::LinearShift(-0.3).a0(x), -0.3);
        assert_eq!(Nonlinearity::Cubic.a0(x), 0.0);
    }
}
