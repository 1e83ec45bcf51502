//! Symmetric quadrature rules on the reference triangle `(0,0), (1,0), (0,1)`.
//!
//! Points are stored as barycentric triples; weights integrate over the
//! reference triangle, so they sum to its area `1/2`. All rules here have
//! strictly positive weights, which keeps weighted mass matrices positive
//! semidefinite whenever the weight is.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrates `g(x, y)` over the reference triangle.
    pub fn integrate_reference<F: Fn(f64, f64) -> f64>(&self, g: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| w * g(l[1], l[2]))
            .sum()
    }

    /// Iterates `(barycentric, weight / reference area)`, i.e. weights that sum to one.
    pub fn normalized(&self) -> impl Iterator<Item = (&[f64; 3], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().map(|w| 2.0 * w))
    }
}

fn permutations(a: f64, b: f64, c: f64) -> Vec<[f64; 3]> {
    vec![
        [a, b, c],
        [a, c, b],
        [b, a, c],
        [b, c, a],
        [c, a, b],
        [c, b, a],
    ]
}

/// Returns a rule exact for bivariate polynomials up to `degree` (1, 2 or 3).
pub fn quadrature_rule(degree: usize) -> Result<QuadratureRule> {
    let (points, weights) = match degree {
        1 => (vec![[1.0 / 3.0; 3]], vec![0.5]),
        2 => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            (vec![[a, b, b], [b, a, b], [b, b, a]], vec![1.0 / 6.0; 3])
        }
        3 => {
            // Strang & Fix six-point rule.
            let pts = permutations(0.659_027_622_374_092, 0.231_933_368_553_031, 0.109_039_009_072_877);
            (pts, vec![1.0 / 12.0; 6])
        }
        d => return Err(Error::invalid(format!("unsupported quadrature degree {d} (expected 1, 2 or 3)"))),
    };
    Ok(QuadratureRule { degree, points, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// `∫ x^a y^b` over the reference triangle = a! b! / (a + b + 2)!.
    fn monomial_integral(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn constant_integrates_to_reference_area() {
        for d in 1..=3 {
            let q = quadrature_rule(d).unwrap();
            assert!((q.integrate_reference(|_, _| 1.0) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_monomial_values() {
        let q2 = quadrature_rule(2).unwrap();
        assert!((q2.integrate_reference(|x, _| x * x) - 1.0 / 12.0).abs() < 1e-15);
        assert!((q2.integrate_reference(|x, y| x * y) - 1.0 / 24.0).abs() < 1e-15);
        let q3 = quadrature_rule(3).unwrap();
        assert!((q3.integrate_reference(|x, _| x * x * x) - 1.0 / 20.0).abs() < 1e-14);
    }

    #[test]
    fn exact_up_to_stated_degree() {
        for d in 1..=3u32 {
            let q = quadrature_rule(d as usize).unwrap();
            for a in 0..=d {
                for b in 0..=(d - a) {
                    let got = q.integrate_reference(|x, y| x.powi(a as i32) * y.powi(b as i32));
                    let want = monomial_integral(a, b);
                    assert!((got - want).abs() < 1e-14, "degree {d}: x^{a} y^{b}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn barycentric_points_are_valid() {
        for d in 1..=3 {
            let q = quadrature_rule(d).unwrap();
            let total: f64 = q.weights.iter().sum();
            assert!((total - 0.5).abs() < 1e-15);
            for l in &q.points {
                assert!(l.iter().all(|&v| v >= 0.0));
                assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unsupported_degree() {
        assert!(matches!(quadrature_rule(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(quadrature_rule(4), Err(Error::InvalidArgument(_))));
    }
}
