//! P1 assembly: stiffness, weighted mass, loads and the semilinear residual.
//!
//! Every mass-type integral uses the same degree-2 rule with the integrand
//! evaluated from P1-interpolated nodal values at the quadrature points.
//! Sharing one rule makes the discrete Jacobian, sensitivities and reduced
//! derivatives exact derivatives of the discrete residual.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point};
use crate::nonlinearity::Nonlinearity;
use crate::quadrature::{quadrature_rule, QuadratureRule};
use crate::sparse::{assemble_from_triplets, SparseMatrix, Triplet};

pub(crate) fn mass_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| quadrature_rule(2).expect("degree-2 rule exists"))
}

/// Quadrature point of a triangle: physical location, barycentric coordinates
/// (equal to the three hat-function values) and the physical weight.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub point: Point,
    pub lambda: [f64; 3],
    pub weight: f64,
}

/// Iterates the degree-2 quadrature points of triangle `t`.
pub fn quad_points(mesh: &Mesh, t: usize) -> impl Iterator<Item = QuadPoint> + '_ {
    let area = mesh.area(t);
    mass_rule().normalized().map(move |(lambda, w)| QuadPoint {
        point: mesh.map_point(t, lambda),
        lambda: *lambda,
        weight: w * area,
    })
}

/// P1 interpolation at barycentric coordinates.
#[inline]
pub fn interpolate(local: &[f64; 3], lambda: &[f64; 3]) -> f64 {
    local[0] * lambda[0] + local[1] * lambda[1] + local[2] * lambda[2]
}

/// Coefficient of a weighted mass matrix.
#[derive(Debug, Clone, Copy)]
pub enum Weight<'a> {
    Constant(f64),
    /// One value per triangle.
    Cellwise(&'a [f64]),
    /// Nodal P1 field, interpolated to quadrature points.
    Nodal(&'a [f64]),
    /// Values at quadrature points, triangle-major (`3 · num_triangles` entries).
    AtQuadrature(&'a [f64]),
}

impl Weight<'_> {
    fn at(&self, mesh: &Mesh, t: usize, q: usize, lambda: &[f64; 3]) -> f64 {
        match self {
            Weight::Constant(c) => *c,
            Weight::Cellwise(w) => w[t],
            Weight::Nodal(w) => interpolate(&mesh.local_values(t, w), lambda),
            Weight::AtQuadrature(w) => w[3 * t + q],
        }
    }
}

fn stiffness_triplets(mesh: &Mesh, out: &mut Vec<Triplet>) {
    for t in 0..mesh.num_triangles() {
        let grads = mesh.hat_gradients(t);
        let area = mesh.area(t);
        let tri = mesh.triangles()[t];
        for a in 0..3 {
            for b in 0..3 {
                let v = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                out.push(Triplet::new(tri[a], tri[b], v));
            }
        }
    }
}

fn mass_triplets(mesh: &Mesh, w: Weight<'_>, out: &mut Vec<Triplet>) {
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let mut local = [[0.0; 3]; 3];
        for (q, qp) in quad_points(mesh, t).enumerate() {
            let wq = w.at(mesh, t, q, &qp.lambda) * qp.weight;
            for a in 0..3 {
                for b in 0..3 {
                    local[a][b] += wq * qp.lambda[a] * qp.lambda[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                out.push(Triplet::new(tri[a], tri[b], local[a][b]));
            }
        }
    }
}

fn finish(mesh: &Mesh, triplets: &[Triplet]) -> SparseMatrix {
    assemble_from_triplets(mesh.num_vertices(), triplets)
        .and_then(SparseMatrix::into_symmetric)
        .expect("element matrices are symmetric and indices come from the mesh")
}

/// `K_ij = (∇φ_j, ∇φ_i)` over all vertices, before any boundary elimination.
pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    let mut trips = Vec::with_capacity(9 * mesh.num_triangles());
    stiffness_triplets(mesh, &mut trips);
    finish(mesh, &trips)
}

/// `M_ij = (w φ_j, φ_i)` with the degree-2 rule.
pub fn assemble_weighted_mass(mesh: &Mesh, w: Weight<'_>) -> SparseMatrix {
    let mut trips = Vec::with_capacity(9 * mesh.num_triangles());
    mass_triplets(mesh, w, &mut trips);
    finish(mesh, &trips)
}

/// `K + M(w)` in one assembly pass.
pub fn assemble_stiffness_plus_mass(mesh: &Mesh, w: Weight<'_>) -> SparseMatrix {
    let mut trips = Vec::with_capacity(18 * mesh.num_triangles());
    stiffness_triplets(mesh, &mut trips);
    mass_triplets(mesh, w, &mut trips);
    finish(mesh, &trips)
}

/// `b_i = (g, φ_i)` for a function of position.
pub fn assemble_load<F: Fn(Point) -> f64>(mesh: &Mesh, g: F) -> Vec<f64> {
    assemble_quadrature_load(mesh, |_, qp| g(qp.point))
}

/// `b_i = Σ_q w_q g(t, q) φ_i(q)` for an integrand given per quadrature point.
pub fn assemble_quadrature_load<F: FnMut(usize, &QuadPoint) -> f64>(mesh: &Mesh, mut g: F) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        for qp in quad_points(mesh, t) {
            let v = g(t, &qp) * qp.weight;
            for a in 0..3 {
                out[tri[a]] += v * qp.lambda[a];
            }
        }
    }
    out
}

/// Per-cell integrals `∫_c g` of an integrand given per quadrature point.
pub fn cell_integrals<F: FnMut(usize, &QuadPoint) -> f64>(mesh: &Mesh, mut g: F) -> Vec<f64> {
    (0..mesh.num_triangles())
        .map(|t| quad_points(mesh, t).map(|qp| qp.weight * g(t, &qp)).sum())
        .collect()
}

/// Zeroes the entries of boundary vertices.
pub fn zero_boundary(mesh: &Mesh, v: &mut [f64]) {
    for (i, x) in v.iter_mut().enumerate() {
        if mesh.is_boundary(i) {
            *x = 0.0;
        }
    }
}

/// Discrete residual `F(y)_i = (∇y, ∇φ_i) + (a(·, y), φ_i) + (u y, φ_i) − (f, φ_i)`
/// on free vertices; boundary entries are zero.
///
/// `f_load` holds the precomputed `(f, φ_i)`.
pub fn assemble_semilinear_residual(
    mesh: &Mesh,
    nl: &Nonlinearity,
    y: &[f64],
    u: &[f64],
    f_load: &[f64],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let yl = mesh.local_values(t, y);
        let grads = mesh.hat_gradients(t);
        let area = mesh.area(t);
        let gy = [
            yl[0] * grads[0][0] + yl[1] * grads[1][0] + yl[2] * grads[2][0],
            yl[0] * grads[0][1] + yl[1] * grads[1][1] + yl[2] * grads[2][1],
        ];
        for a in 0..3 {
            out[tri[a]] += area * (gy[0] * grads[a][0] + gy[1] * grads[a][1]);
        }
        for qp in quad_points(mesh, t) {
            let yq = interpolate(&yl, &qp.lambda);
            let aq = nl.value(qp.point, yq);
            if !aq.is_finite() {
                return Err(Error::NonlinearityEvaluation { label: nl.label().to_string(), y: yq });
            }
            let v = (aq + u[t] * yq) * qp.weight;
            for a in 0..3 {
                out[tri[a]] += v * qp.lambda[a];
            }
        }
    }
    for (o, f) in out.iter_mut().zip(f_load) {
        *o -= f;
    }
    zero_boundary(mesh, &mut out);
    Ok(out)
}

/// Quadrature-point values of `∂a/∂y(·, y) + u`, the reaction coefficient of the
/// linearized operator.
pub fn linearized_reaction(mesh: &Mesh, nl: &Nonlinearity, y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut w = Vec::with_capacity(3 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let yl = mesh.local_values(t, y);
        for qp in quad_points(mesh, t) {
            let yq = interpolate(&yl, &qp.lambda);
            let d = nl.dy(qp.point, yq);
            if !d.is_finite() {
                return Err(Error::NonlinearityEvaluation { label: nl.label().to_string(), y: yq });
            }
            w.push(d + u[t]);
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_structured_mesh, Rectangle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> Mesh {
        build_structured_mesh(n, Rectangle::UNIT_SQUARE).unwrap()
    }

    #[test]
    fn stiffness_kills_constants() {
        let m = unit(1);
        let k = assemble_stiffness(&m);
        assert_eq!(k.dim(), 4);
        for s in k.mul_vec(&[1.0; 4]) {
            assert!(s.abs() < 1e-15);
        }
        let m = unit(7);
        let k = assemble_stiffness(&m);
        let ones = vec![1.0; m.num_vertices()];
        assert!(k.bilinear(&ones, &ones).abs() < 1e-12);
        assert!(k.is_tagged_symmetric());
    }

    #[test]
    fn stiffness_energy_matches_elementwise_gradients() {
        let m = build_structured_mesh(6, Rectangle { x0: 0.0, y0: -1.0, x1: 2.0, y1: 1.0 }).unwrap();
        let k = assemble_stiffness(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..m.num_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        // oracle: the gradient of the affine interpolant from a 2x2 solve on each triangle
        let mut energy = 0.0;
        for t in 0..m.num_triangles() {
            let [a, b, c] = m.corners(t);
            let [va, vb, vc] = m.local_values(t, &v);
            let (e1, e2) = ((b.x - a.x, b.y - a.y), (c.x - a.x, c.y - a.y));
            let det = e1.0 * e2.1 - e1.1 * e2.0;
            let gx = ((vb - va) * e2.1 - (vc - va) * e1.1) / det;
            let gy = ((vc - va) * e1.0 - (vb - va) * e2.0) / det;
            energy += 0.5 * det.abs() * (gx * gx + gy * gy);
        }
        let got = k.bilinear(&v, &v);
        assert!((got - energy).abs() <= 1e-12 * energy.max(1.0), "{got} vs {energy}");
    }

    #[test]
    fn mass_of_one_is_area() {
        let m = unit(5);
        let mass = assemble_weighted_mass(&m, Weight::Constant(1.0));
        let ones = vec![1.0; m.num_vertices()];
        assert!((mass.bilinear(&ones, &ones) - 1.0).abs() < 1e-12);
        let zero = assemble_weighted_mass(&m, Weight::Constant(0.0));
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn cellwise_mass_matches_brute_force() {
        let m = unit(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..m.num_triangles()).map(|_| rng.random_range(0.0..2.0)).collect();
        let mass = assemble_weighted_mass(&m, Weight::Cellwise(&w));
        // oracle: the exact P1 element mass matrix area/12 * (1 + δ_ab), scaled by the cell weight
        let mut dense = vec![vec![0.0; m.num_vertices()]; m.num_vertices()];
        for t in 0..m.num_triangles() {
            let tri = m.triangles()[t];
            for a in 0..3 {
                for b in 0..3 {
                    let base = if a == b { 2.0 } else { 1.0 };
                    dense[tri[a]][tri[b]] += w[t] * m.area(t) * base / 12.0;
                }
            }
        }
        for i in 0..m.num_vertices() {
            for j in 0..m.num_vertices() {
                assert!((mass.get(i, j) - dense[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_trivial_cases() {
        let m = unit(4);
        let n = m.num_vertices();
        let zero = vec![0.0; n];
        let u = vec![0.0; m.num_triangles()];
        let r = assemble_semilinear_residual(&m, &Nonlinearity::Cubic, &zero, &u, &zero).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));

        // linear Poisson: F(y) = K y − M f on free nodes
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        zero_boundary(&m, &mut y);
        let f_load = assemble_load(&m, |p| 1.0 + p.x);
        let r = assemble_semilinear_residual(&m, &Nonlinearity::Zero, &y, &u, &f_load).unwrap();
        let ky = assemble_stiffness(&m).mul_vec(&y);
        for i in 0..n {
            let want = if m.is_boundary(i) { 0.0 } else { ky[i] - f_load[i] };
            assert!((r[i] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn residual_jacobian_matches_finite_differences() {
        let m = unit(6);
        let n = m.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        zero_boundary(&m, &mut y);
        zero_boundary(&m, &mut dir);
        let u: Vec<f64> = (0..m.num_triangles()).map(|_| rng.random_range(0.0..2.0)).collect();
        let f_load = assemble_load(&m, |_| 3.0);
        for nl in [Nonlinearity::Cubic, Nonlinearity::Atan] {
            let w = linearized_reaction(&m, &nl, &y, &u).unwrap();
            let jac = assemble_stiffness_plus_mass(&m, Weight::AtQuadrature(&w)).eliminate_dirichlet(m.boundary_flags());
            let jd = jac.mul_vec(&dir);
            let eps = 1e-6;
            let plus: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
            let minus: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
            let rp = assemble_semilinear_residual(&m, &nl, &plus, &u, &f_load).unwrap();
            let rm = assemble_semilinear_residual(&m, &nl, &minus, &u, &f_load).unwrap();
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let err: f64 = fd.iter().zip(&jd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = jd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * scale, "{nl}: {err} vs {scale}");
        }
    }

    #[test]
    fn residual_reports_nonfinite_nonlinearity() {
        let m = unit(2);
        let mut y = vec![0.0; 9];
        y[4] = f64::NAN;
        let err = assemble_semilinear_residual(&m, &Nonlinearity::Cubic, &y, &[0.0; 8], &[0.0; 9]).unwrap_err();
        assert!(matches!(err, Error::NonlinearityEvaluation { .. }));
    }
}
