//! Compressed sparse row matrices, triplet assembly and the two linear solvers
//! used by every PDE solve: Jacobi-preconditioned conjugate gradients and a
//! banded LU with partial pivoting.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Triplet {
    pub const fn new(row: usize, col: usize, value: f64) -> Self {
        Triplet { row, col, value }
    }
}

/// Square CSR matrix. Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

/// Sorts and sums duplicates. Duplicates are summed in ascending value order,
/// so the result is bit-identical for any permutation of the input.
pub fn assemble_from_triplets(dim: usize, triplets: &[Triplet]) -> Result<SparseMatrix> {
    if let Some(t) = triplets.iter().find(|t| t.row >= dim || t.col >= dim) {
        return Err(Error::invalid(format!(
            "triplet ({}, {}) out of range for dimension {dim}",
            t.row, t.col
        )));
    }
    let mut sorted = triplets.to_vec();
    sorted.sort_unstable_by(|a, b| {
        (a.row, a.col)
            .cmp(&(b.row, b.col))
            .then_with(|| a.value.total_cmp(&b.value))
    });
    let mut row_offsets = vec![0usize; dim + 1];
    let mut col_indices = Vec::with_capacity(sorted.len());
    let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut last: Option<(usize, usize)> = None;
    for t in &sorted {
        if last == Some((t.row, t.col)) {
            *values.last_mut().unwrap() += t.value;
        } else {
            col_indices.push(t.col);
            values.push(t.value);
            row_offsets[t.row + 1] += 1;
            last = Some((t.row, t.col));
        }
    }
    for i in 0..dim {
        row_offsets[i + 1] += row_offsets[i];
    }
    Ok(SparseMatrix { dim, row_offsets, col_indices, values, symmetric: false })
}

impl SparseMatrix {
    pub fn identity(dim: usize) -> Self {
        SparseMatrix {
            dim,
            row_offsets: (0..=dim).collect(),
            col_indices: (0..dim).collect(),
            values: vec![1.0; dim],
            symmetric: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_tagged_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim, "vector length does not match matrix dimension");
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.dim)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    /// `max |A - Aᵀ|`
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Tags the matrix symmetric after checking `‖A − Aᵀ‖_max ≤ 1e-12 ‖A‖_max`.
    pub fn into_symmetric(mut self) -> Result<Self> {
        let scale = self.max_abs();
        let asym = self.asymmetry();
        if asym > 1e-12 * scale {
            return Err(Error::invalid(format!(
                "matrix is not symmetric: max |A - Aᵀ| = {asym:e}, max |A| = {scale:e}"
            )));
        }
        self.symmetric = true;
        Ok(self)
    }

    /// Symmetric elimination of the flagged rows and columns: they are zeroed
    /// and the diagonal entry set to one.
    pub fn eliminate_dirichlet(&self, fixed: &[bool]) -> SparseMatrix {
        assert_eq!(fixed.len(), self.dim);
        let mut out = self.clone();
        for i in 0..self.dim {
            for k in out.row_offsets[i]..out.row_offsets[i + 1] {
                let j = out.col_indices[k];
                if fixed[i] || fixed[j] {
                    out.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        dense
    }

    /// Lower and upper bandwidth.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut lower, mut upper) = (0, 0);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                if v != 0.0 {
                    if j < i {
                        lower = lower.max(i - j);
                    } else {
                        upper = upper.max(j - i);
                    }
                }
            }
        }
        (lower, upper)
    }

    /// Writes the matrix in MatrixMarket coordinate format (general, 1-based).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.dim, self.dim, self.nnz())?;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an accepted conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖Ax − b‖₂ / ‖b‖₂`, recomputed from the true residual.
    pub relative_residual: f64,
}

const MAX_RESTARTS: usize = 3;

/// Jacobi-preconditioned CG bound to one symmetric matrix. The preconditioner
/// is built once and reused for any number of right-hand sides.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    matrix: SparseMatrix,
    inv_diag: Vec<f64>,
}

impl SpdSolver {
    pub fn new(matrix: SparseMatrix) -> Result<Self> {
        if !matrix.is_tagged_symmetric() {
            return Err(Error::invalid("conjugate gradients need a matrix tagged symmetric"));
        }
        let diag = matrix.diagonal();
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::invalid(format!(
                "non-positive diagonal entry {} at row {i}; matrix is not SPD",
                diag[i]
            )));
        }
        let inv_diag = diag.iter().map(|d| 1.0 / d).collect();
        Ok(SpdSolver { matrix, inv_diag })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
        let a = &self.matrix;
        let n = a.dim();
        if rhs.len() != n {
            return Err(Error::invalid(format!("rhs has length {} but matrix dimension is {n}", rhs.len())));
        }
        let rhs_norm = norm(rhs);
        let mut x = vec![0.0; n];
        if rhs_norm == 0.0 {
            return Ok(CgOutcome { solution: x, iterations: 0, relative_residual: 0.0 });
        }
        let target = tol * rhs_norm;
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut restarts = 0;
        while iterations < max_iter {
            a.mul_vec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::invalid(format!(
                    "conjugate gradients hit non-positive curvature {pap:e}; matrix is not SPD"
                )));
            }
            let step = rz / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            iterations += 1;
            let rnorm = norm(&r);
            history.push(rnorm / rhs_norm);
            if rnorm <= target {
                // confirm against the true residual; restart from it if recurrence drifted
                a.mul_vec_into(&x, &mut ap);
                for i in 0..n {
                    r[i] = rhs[i] - ap[i];
                }
                let true_norm = norm(&r);
                if true_norm <= target {
                    return Ok(CgOutcome { solution: x, iterations, relative_residual: true_norm / rhs_norm });
                }
                restarts += 1;
                if restarts > MAX_RESTARTS {
                    // attainable accuracy reached; further iterations only repeat round-off
                    return Err(Error::NoConvergence {
                        solver: "conjugate gradients (stagnated)",
                        iterations,
                        residual: true_norm / rhs_norm,
                        history,
                    });
                }
                for i in 0..n {
                    z[i] = r[i] * self.inv_diag[i];
                }
                p.copy_from_slice(&z);
                rz = dot(&r, &z);
                continue;
            }
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        a.mul_vec_into(&x, &mut ap);
        let residual = norm(&rhs.iter().zip(&ap).map(|(b, v)| b - v).collect::<Vec<_>>()) / rhs_norm;
        Err(Error::NoConvergence { solver: "conjugate gradients", iterations, residual, history })
    }
}

/// Solves `Ax = rhs` for a symmetric positive definite `A` with Jacobi-preconditioned CG.
///
/// On success `‖Ax − rhs‖₂ ≤ tol · ‖rhs‖₂`.
pub fn solve_spd(a: &SparseMatrix, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    Ok(SpdSolver::new(a.clone())?.solve(rhs, tol, max_iter)?.solution)
}

/// Direct solve by banded Gaussian elimination with partial pivoting.
pub fn solve_direct(a: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if rhs.len() != n {
        return Err(Error::invalid(format!("rhs has length {} but matrix dimension is {n}", rhs.len())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let (kl, ku) = a.bandwidths();
    // Row pivoting can widen the upper band to kl + ku.
    let upper = kl + ku;
    let width = kl + upper + 1;
    let offset = kl;
    let mut band = vec![0.0; n * width];
    let idx = |i: usize, j: usize| i * width + (j + offset - i);
    for i in 0..n {
        for (j, v) in a.row(i) {
            band[idx(i, j)] = v;
        }
    }
    let mut b = rhs.to_vec();
    let scale = a.max_abs();
    for k in 0..n {
        let last_row = (k + kl).min(n - 1);
        let mut pivot_row = k;
        let mut pivot_abs = band[idx(k, k)].abs();
        for i in k + 1..=last_row {
            let v = band[idx(i, k)].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = i;
            }
        }
        if !(pivot_abs > 1e-14 * scale) {
            return Err(Error::SingularMatrix { row: k, pivot: pivot_abs });
        }
        let last_col = (k + upper).min(n - 1);
        if pivot_row != k {
            for j in k..=last_col {
                band.swap(idx(k, j), idx(pivot_row, j));
            }
            b.swap(k, pivot_row);
        }
        let pivot = band[idx(k, k)];
        for i in k + 1..=last_row {
            let factor = band[idx(i, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            band[idx(i, k)] = 0.0;
            for j in k + 1..=last_col {
                band[idx(i, j)] -= factor * band[idx(k, j)];
            }
            b[i] -= factor * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let last_col = (k + upper).min(n - 1);
        let mut s = b[k];
        for j in k + 1..=last_col {
            s -= band[idx(k, j)] * x[j];
        }
        x[k] = s / band[idx(k, k)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(values: &[f64]) -> SparseMatrix {
        let t: Vec<_> = values.iter().enumerate().map(|(i, &v)| Triplet::new(i, i, v)).collect();
        assemble_from_triplets(values.len(), &t).unwrap().into_symmetric().unwrap()
    }

    fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
        let ax = a.mul_vec(x);
        norm(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>())
    }

    #[test]
    fn duplicates_are_summed() {
        let m = assemble_from_triplets(1, &[Triplet::new(0, 0, 1.0), Triplet::new(0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn empty_is_zero() {
        let m = assemble_from_triplets(3, &[]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(
            assemble_from_triplets(2, &[Triplet::new(0, 2, 1.0)]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn random_triplets_match_dense_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 12;
        let trips: Vec<_> = (0..300)
            .map(|_| Triplet::new(rng.random_range(0..dim), rng.random_range(0..dim), rng.random_range(-1.0..1.0)))
            .collect();
        let mut dense = vec![vec![0.0; dim]; dim];
        for t in &trips {
            dense[t.row][t.col] += t.value;
        }
        let m = assemble_from_triplets(dim, &trips).unwrap();
        for i in 0..dim {
            let cols: Vec<_> = m.row(i).map(|(j, _)| j).collect();
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
            for j in 0..dim {
                assert!((m.get(i, j) - dense[i][j]).abs() < 1e-13);
            }
        }
        let mut shuffled = trips.clone();
        shuffled.shuffle(&mut rng);
        let m2 = assemble_from_triplets(dim, &shuffled).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn symmetry_tag() {
        let m = assemble_from_triplets(2, &[Triplet::new(0, 1, 1.0), Triplet::new(1, 0, 2.0)]).unwrap();
        assert!(m.clone().into_symmetric().is_err());
        assert!(matches!(solve_spd(&m, &[1.0, 1.0], 1e-10, 10), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn trivial_spd_solves() {
        let id = SparseMatrix::identity(4);
        let b = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(solve_spd(&id, &b, 1e-12, 10).unwrap(), b.to_vec());
        let d = diag(&[2.0, 4.0]);
        let x = solve_spd(&d, &[2.0, 8.0], 1e-14, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> (SparseMatrix, nalgebra::DMatrix<f64>) {
        let b = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let dense = &b * b.transpose() + nalgebra::DMatrix::identity(n, n) * (n as f64 * 0.1);
        let mut trips = Vec::new();
        for i in 0..n {
            for j in 0..n {
                trips.push(Triplet::new(i, j, dense[(i, j)]));
            }
        }
        let a = assemble_from_triplets(n, &trips).unwrap();
        // enforce exact symmetry from the dense oracle
        let a = assemble_from_triplets(
            n,
            &(0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| Triplet::new(i, j, 0.5 * (a.get(i, j) + a.get(j, i))))
                .collect::<Vec<_>>(),
        )
        .unwrap()
        .into_symmetric()
        .unwrap();
        let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        (a, dense)
    }

    #[test]
    fn cg_matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (a, dense) = random_spd(&mut rng, 20);
        let b: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_spd(&a, &b, 1e-13, 500).unwrap();
        let oracle = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b.clone()));
        for i in 0..20 {
            assert!((x[i] - oracle[i]).abs() < 1e-8);
        }
        assert!(residual(&a, &x, &b) <= 1e-13 * norm(&b));
    }

    #[test]
    fn cg_reports_budget_exhaustion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, _) = random_spd(&mut rng, 20);
        let b = vec![1.0; 20];
        match solve_spd(&a, &b, 1e-15, 2) {
            Err(Error::NoConvergence { iterations, residual, .. }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected no-convergence, got {other:?}"),
        }
    }

    #[test]
    fn direct_small_cases() {
        let m = assemble_from_triplets(1, &[Triplet::new(0, 0, 2.0)]).unwrap();
        assert_eq!(solve_direct(&m, &[4.0]).unwrap(), vec![2.0]);
        // cyclic permutation: row i has a one in column (i + 1) % 4
        let perm = assemble_from_triplets(4, &(0..4).map(|i| Triplet::new(i, (i + 1) % 4, 1.0)).collect::<Vec<_>>())
            .unwrap();
        let b = [1.0, 2.0, 3.0, 4.0];
        let x = solve_direct(&perm, &b).unwrap();
        assert_eq!(x, vec![4.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn direct_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 15;
        let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 }
        });
        let trips: Vec<_> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| Triplet::new(i, j, dense[(i, j)]))
            .collect();
        let a = assemble_from_triplets(n, &trips).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_direct(&a, &b).unwrap();
        let oracle = dense.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-9);
        }
        assert!(residual(&a, &x, &b) <= 1e-10 * norm(&b));
    }

    #[test]
    fn direct_detects_singular() {
        let m = assemble_from_triplets(
            2,
            &[Triplet::new(0, 0, 1.0), Triplet::new(0, 1, 2.0), Triplet::new(1, 0, 2.0), Triplet::new(1, 1, 4.0)],
        )
        .unwrap();
        assert!(matches!(solve_direct(&m, &[1.0, 1.0]), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn dirichlet_elimination_keeps_symmetry() {
        let m = assemble_from_triplets(
            3,
            &[
                Triplet::new(0, 0, 2.0),
                Triplet::new(0, 1, -1.0),
                Triplet::new(1, 0, -1.0),
                Triplet::new(1, 1, 2.0),
                Triplet::new(1, 2, -1.0),
                Triplet::new(2, 1, -1.0),
                Triplet::new(2, 2, 2.0),
            ],
        )
        .unwrap();
        let e = m.eliminate_dirichlet(&[true, false, false]);
        assert_eq!(e.get(0, 0), 1.0);
        assert_eq!(e.get(0, 1), 0.0);
        assert_eq!(e.get(1, 0), 0.0);
        assert_eq!(e.get(1, 1), 2.0);
        assert!(e.into_symmetric().is_ok());
    }

    #[test]
    fn matrix_market_dump() {
        let d = diag(&[1.5, 2.0]);
        let mut buf = Vec::new();
        d.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.5e0\n"));
    }
}
