//! Triangular meshes of convex polygons, point location and P1 point functionals.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rectangle {
    pub const UNIT_SQUARE: Rectangle = Rectangle { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Triangle index plus barycentric coordinates of a located point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycentricLocation {
    pub triangle_index: usize,
    pub lambda: [f64; 3],
}

/// Sparse nodal vector with at most a handful of entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| v * dense[i]).sum()
    }

    /// `dense += scale * self`
    pub fn add_scaled_to(&self, scale: f64, dense: &mut [f64]) {
        for (&i, v) in self.indices.iter().zip(&self.values) {
            dense[i] += scale * v;
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.add_scaled_to(1.0, &mut out);
        out
    }
}

/// Conforming triangulation with counterclockwise triangles and boundary flags.
///
/// Immutable once built; every query takes `&self`.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    areas: Vec<f64>,
    boundary_edges: Vec<(usize, usize)>,
    h_max: f64,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

impl Mesh {
    /// Validates and builds a mesh. Triangles must be counterclockwise with
    /// positive area, conforming, and `boundary` must flag exactly the vertices
    /// lying on boundary edges.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary: Vec<bool>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::invalid("mesh needs at least one vertex and one triangle"));
        }
        if boundary.len() != vertices.len() {
            return Err(Error::invalid(format!(
                "{} boundary flags for {} vertices",
                boundary.len(),
                vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("vertex {i} has non-finite coordinates")));
        }
        let mut areas = Vec::with_capacity(triangles.len());
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        let mut h_max = 0.0f64;
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(Error::invalid(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
            areas.push(area);
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                h_max = h_max.max(vertices[i].distance(&vertices[j]));
                *edges.entry((i.min(j), i.max(j))).or_default() += 1;
            }
        }
        let mut on_boundary = vec![false; vertices.len()];
        let mut boundary_edges = Vec::new();
        for (&(i, j), &count) in &edges {
            match count {
                1 => {
                    on_boundary[i] = true;
                    on_boundary[j] = true;
                    boundary_edges.push((i, j));
                }
                2 => {}
                _ => return Err(Error::invalid(format!("edge ({i}, {j}) shared by {count} triangles"))),
            }
        }
        if let Some(v) = (0..vertices.len()).find(|&v| on_boundary[v] != boundary[v]) {
            return Err(Error::invalid(format!(
                "vertex {v} boundary flag is {} but the mesh topology says {}",
                boundary[v], on_boundary[v]
            )));
        }
        boundary_edges.sort_unstable();
        Ok(Mesh { vertices, triangles, boundary, areas, boundary_edges, h_max })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Maps barycentric coordinates in triangle `t` to a physical point.
    pub fn map_point(&self, t: usize, lambda: &[f64; 3]) -> Point {
        let [a, b, c] = self.corners(t);
        Point::new(
            lambda[0] * a.x + lambda[1] * b.x + lambda[2] * c.x,
            lambda[0] * a.y + lambda[1] * b.y + lambda[2] * c.y,
        )
    }

    /// Constant gradients of the three barycentric (hat) functions on triangle `t`.
    pub fn hat_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.corners(t);
        let two_area = 2.0 * self.areas[t];
        [
            [(b.y - c.y) / two_area, (c.x - b.x) / two_area],
            [(c.y - a.y) / two_area, (a.x - c.x) / two_area],
            [(a.y - b.y) / two_area, (b.x - a.x) / two_area],
        ]
    }

    /// Returns the triangle-local values of a nodal field.
    pub fn local_values(&self, t: usize, nodal: &[f64]) -> [f64; 3] {
        self.triangles[t].map(|v| nodal[v])
    }

    /// Unnormalized barycentric coordinates of `p` with respect to triangle `t`.
    fn raw_barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let two_area = 2.0 * self.areas[t];
        let l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / two_area;
        let l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / two_area;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Locates `p`, breaking ties by the lowest triangle index.
    pub fn locate_point(&self, p: Point) -> Result<BarycentricLocation> {
        if !p.is_finite() {
            return Err(Error::PointOutsideDomain(p));
        }
        let dist_tol = 1e-12 * self.h_max;
        for t in 0..self.triangles.len() {
            let lambda = self.raw_barycentric(t, p);
            let [a, b, c] = self.corners(t);
            // Opposite edge lengths convert the distance tolerance into barycentric units.
            let opposite = [b.distance(&c), c.distance(&a), a.distance(&b)];
            let inside = (0..3).all(|k| lambda[k] >= -dist_tol * opposite[k] / (2.0 * self.areas[t]));
            if inside {
                let mut clamped = lambda.map(|l| l.clamp(0.0, 1.0));
                let total: f64 = clamped.iter().sum();
                clamped.iter_mut().for_each(|l| *l /= total);
                return Ok(BarycentricLocation { triangle_index: t, lambda: clamped });
            }
        }
        Err(Error::PointOutsideDomain(p))
    }

    /// Evaluates the P1 interpolant of a nodal field at `p`.
    pub fn evaluate(&self, nodal: &[f64], p: Point) -> Result<f64> {
        let loc = self.locate_point(p)?;
        let local = self.local_values(loc.triangle_index, nodal);
        Ok((0..3).map(|k| loc.lambda[k] * local[k]).sum())
    }

    /// Whether `p` is inside the mesh and off the boundary by more than the location tolerance.
    pub fn is_strictly_interior(&self, p: Point) -> bool {
        let Ok(loc) = self.locate_point(p) else {
            return false;
        };
        let tri = self.triangles[loc.triangle_index];
        let eps = 1e-12;
        for k in 0..3 {
            if loc.lambda[k] <= eps {
                let (i, j) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                if self.is_boundary_edge(i, j) {
                    return false;
                }
            }
            if loc.lambda[k] >= 1.0 - eps && self.boundary[tri[k]] {
                return false;
            }
        }
        true
    }

    fn is_boundary_edge(&self, i: usize, j: usize) -> bool {
        self.boundary_edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    /// Distance from `p` to the nearest boundary edge.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        self.boundary_edges
            .iter()
            .map(|&(i, j)| point_segment_distance(p, self.vertices[i], self.vertices[j]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Triangle pairs sharing an edge, in ascending order.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        let mut pairs = Vec::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                let key = (i.min(j), i.max(j));
                if let Some(&s) = owner.get(&key) {
                    pairs.push((s.min(t), s.max(t)));
                } else {
                    owner.insert(key, t);
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let s = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&Point::new(a.x + s * dx, a.y + s * dy))
}

/// Structured mesh of a rectangle: an `n × n` grid with every cell split
/// along its SW–NE diagonal into two counterclockwise triangles.
pub fn build_structured_mesh(n: usize, domain: Rectangle) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::invalid("structured mesh needs n >= 1 subdivisions"));
    }
    let (w, h) = (domain.width(), domain.height());
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::invalid(format!("degenerate rectangle {domain:?}")));
    }
    let nv = n + 1;
    let mut vertices = Vec::with_capacity(nv * nv);
    let mut boundary = Vec::with_capacity(nv * nv);
    for j in 0..nv {
        for i in 0..nv {
            let x = if i == n { domain.x1 } else { domain.x0 + w * i as f64 / n as f64 };
            let y = if j == n { domain.y1 } else { domain.y0 + h * j as f64 / n as f64 };
            vertices.push(Point::new(x, y));
            boundary.push(i == 0 || j == 0 || i == n || j == n);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * nv + i;
            let v10 = v00 + 1;
            let v01 = v00 + nv;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut mesh = Mesh::new(vertices, triangles, boundary)?;
    let (dx, dy) = (w / n as f64, h / n as f64);
    mesh.h_max = (dx * dx + dy * dy).sqrt();
    Ok(mesh)
}

/// Locates `p`.
pub fn locate_point(mesh: &Mesh, p: Point) -> Result<BarycentricLocation> {
    mesh.locate_point(p)
}

/// Discrete point functional: entries are the hat functions `φ_i(p)`.
pub fn dirac_load_vector(mesh: &Mesh, p: Point) -> Result<SparseVector> {
    let loc = mesh.locate_point(p)?;
    let tri = mesh.triangles()[loc.triangle_index];
    let mut out = SparseVector::default();
    for k in 0..3 {
        if loc.lambda[k] != 0.0 {
            out.indices.push(tri[k]);
            out.values.push(loc.lambda[k]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> Mesh {
        build_structured_mesh(n, Rectangle::UNIT_SQUARE).unwrap()
    }

    #[test]
    fn smallest_mesh() {
        let m = unit(1);
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert!(m.boundary_flags().iter().all(|&b| b));
    }

    #[test]
    fn two_by_two_counts() {
        let m = unit(2);
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_triangles(), 8);
        assert_eq!(m.boundary_flags().iter().filter(|&&b| b).count(), 8);
        assert!(!m.is_boundary(4));
    }

    #[test]
    fn areas_sum_to_domain() {
        let m = unit(8);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        let r = build_structured_mesh(5, Rectangle { x0: -1.0, y0: 2.0, x1: 2.0, y1: 2.5 }).unwrap();
        assert!((r.total_area() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn h_max_is_cell_diagonal_and_halves() {
        for n in [1, 3, 8, 16] {
            let a = unit(n);
            let b = unit(2 * n);
            assert_eq!(b.h_max(), a.h_max() / 2.0);
            let mut longest = 0.0f64;
            for t in 0..a.num_triangles() {
                let [p, q, r] = a.corners(t);
                longest = longest.max(p.distance(&q)).max(q.distance(&r)).max(r.distance(&p));
            }
            assert!((longest - a.h_max()).abs() <= 1e-15 * longest);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_structured_mesh(0, Rectangle::UNIT_SQUARE).is_err());
        let flat = Rectangle { x0: 0.0, y0: 0.0, x1: 1.0, y1: 0.0 };
        assert!(build_structured_mesh(2, flat).is_err());
    }

    #[test]
    fn mesh_new_rejects_inconsistent_input() {
        let v = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        assert!(Mesh::new(v.clone(), vec![[0, 2, 1]], vec![true; 3]).is_err());
        assert!(Mesh::new(v.clone(), vec![[0, 1, 2]], vec![true, true, false]).is_err());
        assert!(Mesh::new(v, vec![[0, 1, 2]], vec![true; 3]).is_ok());
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let m = unit(4);
        let loc = m.locate_point(m.vertices()[7]).unwrap();
        let mut sorted = loc.lambda;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted, [0.0, 0.0, 1.0]);
        for t in [0, 5, 31] {
            let loc = m.locate_point(m.centroid(t)).unwrap();
            assert_eq!(loc.triangle_index, t);
            for l in loc.lambda {
                assert!((l - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn locate_ties_pick_lowest_index() {
        let m = unit(2);
        // the centre vertex is shared by six triangles
        let p = Point::new(0.5, 0.5);
        let loc = m.locate_point(p).unwrap();
        let first = (0..m.num_triangles())
            .find(|&t| m.triangles()[t].contains(&4))
            .unwrap();
        assert_eq!(loc.triangle_index, first);
    }

    #[test]
    fn random_points_reconstruct() {
        let m = build_structured_mesh(7, Rectangle { x0: -1.0, y0: 0.0, x1: 1.0, y1: 3.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(0.0..3.0));
            let loc = m.locate_point(p).unwrap();
            let q = m.map_point(loc.triangle_index, &loc.lambda);
            assert!(p.distance(&q) < 1e-12);
            assert!((loc.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_points_rejected() {
        let m = unit(3);
        assert!(matches!(m.locate_point(Point::new(1.1, 0.5)), Err(Error::PointOutsideDomain(_))));
        assert!(matches!(m.locate_point(Point::new(0.5, -1e-6)), Err(Error::PointOutsideDomain(_))));
        assert!(m.locate_point(Point::new(1.0, 1.0)).is_ok());
    }

    #[test]
    fn dirac_vectors() {
        let m = unit(4);
        let d = dirac_load_vector(&m, m.vertices()[6]).unwrap();
        assert_eq!(d.to_dense(m.num_vertices()), {
            let mut e = vec![0.0; m.num_vertices()];
            e[6] = 1.0;
            e
        });
        let mid = Point::new(0.5 * (0.25 + 0.5), 0.25);
        let d = dirac_load_vector(&m, mid).unwrap();
        let dense = d.to_dense(m.num_vertices());
        assert!((dense[6] - 0.5).abs() < 1e-15 && (dense[7] - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = Point::new(rng.random(), rng.random());
            let loc = m.locate_point(p).unwrap();
            let d = dirac_load_vector(&m, p).unwrap();
            let dense = d.to_dense(m.num_vertices());
            let tri = m.triangles()[loc.triangle_index];
            for k in 0..3 {
                assert_eq!(dense[tri[k]], loc.lambda[k]);
            }
            assert!((d.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.indices.len() <= 3);
        }
    }

    #[test]
    fn interior_test() {
        let m = unit(4);
        assert!(m.is_strictly_interior(Point::new(0.5, 0.5)));
        assert!(!m.is_strictly_interior(Point::new(1.0, 0.5)));
        assert!(!m.is_strictly_interior(Point::new(0.0, 0.0)));
        assert!(!m.is_strictly_interior(Point::new(2.0, 0.5)));
        assert!((m.distance_to_boundary(Point::new(0.3, 0.5)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn adjacency() {
        let m = unit(1);
        assert_eq!(m.adjacent_pairs(), vec![(0, 1)]);
        // interior edges of an n×n criss-free grid: 3n² - 2n
        let m = unit(4);
        assert_eq!(m.adjacent_pairs().len(), 3 * 16 - 8);
    }
}
