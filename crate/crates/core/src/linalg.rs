//! Sparse operators and small dense helpers shared by the discretizations.
//!
//! Sparse storage and factorizations are backed by `faer`; this module owns
//! the conventions (triplet assembly, symmetry flags, submatrix extraction,
//! scatter/gather products against locally supported vectors) used throughout
//! the assembly and reduction code.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::{Error, Result};

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        TripletBuilder {
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.entries.push(Triplet::new(row, col, val));
        }
    }

    pub fn build(self, nrows: usize, ncols: usize, symmetric: bool) -> SparseOperator {
        let mat = SparseColMat::try_new_from_triplets(nrows, ncols, &self.entries)
            .expect("triplet indices within bounds");
        SparseOperator { mat, symmetric }
    }
}

/// A sparse matrix with an explicit symmetry flag.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    mat: SparseColMat<usize, f64>,
    symmetric: bool,
}

impl SparseOperator {
    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn inner(&self) -> &SparseColMat<usize, f64> {
        &self.mat
    }

    /// Dense `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols(), "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows()];
        for j in 0..self.ncols() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let rows = self.mat.row_idx_of_col_raw(j);
            let vals = self.mat.val_of_col(j);
            for (r, v) in rows.iter().zip(vals) {
                y[*r] += v * xj;
            }
        }
        y
    }

    /// `out += A[:, idx] * vals` for a locally supported input.
    pub fn scatter_mul(&self, idx: &[usize], vals: &[f64], out: &mut [f64]) {
        debug_assert_eq!(idx.len(), vals.len());
        assert_eq!(out.len(), self.nrows());
        for (j, v) in idx.iter().zip(vals) {
            if *v == 0.0 {
                continue;
            }
            let rows = self.mat.row_idx_of_col_raw(*j);
            let cvals = self.mat.val_of_col(*j);
            for (r, a) in rows.iter().zip(cvals) {
                out[*r] += a * v;
            }
        }
    }

    /// Sparse product `A x` of a locally supported vector, returned sparse.
    pub fn mul_local(&self, x: &LocalVector) -> LocalVector {
        let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(16 * x.len());
        for (j, v) in x.idx.iter().zip(&x.val) {
            if *v == 0.0 {
                continue;
            }
            let rows = self.mat.row_idx_of_col_raw(*j);
            let vals = self.mat.val_of_col(*j);
            for (r, a) in rows.iter().zip(vals) {
                pairs.push((*r, a * v));
            }
        }
        pairs.sort_unstable_by_key(|(r, _)| *r);
        let mut idx = Vec::with_capacity(pairs.len());
        let mut val = Vec::with_capacity(pairs.len());
        for (r, v) in pairs {
            if idx.last() == Some(&r) {
                *val.last_mut().unwrap() += v;
            } else {
                idx.push(r);
                val.push(v);
            }
        }
        LocalVector::new(idx, val)
    }

    /// Quadratic/bilinear form `u^T A v` for locally supported `u` and dense `v`.
    pub fn gather_form(&self, u_idx: &[usize], u_vals: &[f64], v: &[f64]) -> f64 {
        let av = self.matvec(v);
        u_idx
            .iter()
            .zip(u_vals)
            .map(|(i, uv)| uv * av[*i])
            .sum()
    }

    /// Bilinear form `u^T A v` on dense vectors.
    pub fn form(&self, u: &[f64], v: &[f64]) -> f64 {
        let av = self.matvec(v);
        u.iter().zip(&av).map(|(a, b)| a * b).sum()
    }

    pub fn set_symmetric(&mut self, symmetric: bool) {
        self.symmetric = symmetric;
    }

    /// Symmetric principal submatrix on the given index set.
    pub fn submatrix_symmetric(&self, idx: &[usize]) -> SparseOperator {
        let mut sub = self.submatrix(idx, idx);
        sub.symmetric = true;
        sub
    }

    /// Extracts the submatrix `A[rows, cols]` with renumbered indices.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseOperator {
        let mut row_map = vec![usize::MAX; self.nrows()];
        for (k, r) in rows.iter().enumerate() {
            row_map[*r] = k;
        }
        let mut tb = TripletBuilder::new();
        for (jc, j) in cols.iter().enumerate() {
            let ridx = self.mat.row_idx_of_col_raw(*j);
            let vals = self.mat.val_of_col(*j);
            for (r, v) in ridx.iter().zip(vals) {
                if row_map[*r] != usize::MAX {
                    tb.add(row_map[*r], jc, *v);
                }
            }
        }
        tb.build(rows.len(), cols.len(), false)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        self.mat.to_dense()
    }

    /// Sparse direct factorization: Cholesky when flagged symmetric
    /// (falling back to LU if the matrix is not positive definite), LU
    /// otherwise.
    pub fn factorize(&self) -> Result<Factorization> {
        if self.nrows() != self.ncols() {
            return Err(Error::dim(format!(
                "cannot factorize a {}x{} operator",
                self.nrows(),
                self.ncols()
            )));
        }
        if self.symmetric {
            if let Ok(llt) = self.mat.sp_cholesky(Side::Lower) {
                return Ok(Factorization::Llt(llt));
            }
        }
        match self.mat.sp_lu() {
            Ok(lu) => Ok(Factorization::Lu(lu)),
            Err(e) => Err(Error::solver(format!("sparse factorization failed: {e:?}"))),
        }
    }
}

/// A reusable sparse factorization.
pub enum Factorization {
    Llt(faer::sparse::linalg::solvers::Llt<usize, f64>),
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
}

impl Factorization {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = match self {
            Factorization::Llt(f) => f.solve(&b),
            Factorization::Lu(f) => f.solve(&b),
        };
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves for several right-hand sides given as columns.
    pub fn solve_many(&self, rhs: &Mat<f64>) -> Mat<f64> {
        match self {
            Factorization::Llt(f) => f.solve(rhs),
            Factorization::Lu(f) => f.solve(rhs),
        }
    }
}

// ---- dense helpers ----

/// Solves `L y = b` for lower-triangular `L` (forward substitution).
fn forward_substitute(l: &Mat<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `L^T y = b` for lower-triangular `L` (back substitution).
fn backward_substitute_t(l: &Mat<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves the generalized symmetric eigenproblem `A x = lambda S x` with
/// `S` positive definite, via `S = L L^T` and a symmetric standard problem.
///
/// Returns eigenvalues in ascending order and eigenvectors as columns,
/// S-orthonormal (`x_i^T S x_j = delta_ij`).
pub fn generalized_symmetric_eigen(a: &Mat<f64>, s: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(s.nrows(), n);
    assert_eq!(s.ncols(), n);

    let llt = s
        .llt(Side::Lower)
        .map_err(|_| Error::solver("S matrix in generalized eigenproblem is not positive definite"))?;
    let l = llt.L().to_owned();

    // C = L^{-1} A L^{-T}, formed column by column
    let mut c = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let mut col: Vec<f64> = (0..n).map(|i| a[(i, j)]).collect();
        forward_substitute(&l, &mut col);
        for i in 0..n {
            c[(i, j)] = col[i];
        }
    }
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).map(|j| c[(i, j)]).collect();
        forward_substitute(&l, &mut row);
        for j in 0..n {
            c[(i, j)] = row[j];
        }
    }
    // symmetrize against round-off
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = m;
            c[(j, i)] = m;
        }
    }

    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::solver("symmetric eigendecomposition failed"))?;
    let eigs: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();

    let mut vecs = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let mut col: Vec<f64> = (0..n).map(|i| evd.U()[(i, j)]).collect();
        backward_substitute_t(&l, &mut col);
        for i in 0..n {
            vecs[(i, j)] = col[i];
        }
    }
    Ok((eigs, vecs))
}

/// Solves a small dense system with partial-pivot LU.
pub fn dense_solve(a: &Mat<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(rhs.len(), n);
    let lu = a.partial_piv_lu();
    let b = Mat::from_fn(n, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    let sol: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::solver("dense solve produced non-finite values"));
    }
    Ok(sol)
}

/// An incrementally maintained dense Cholesky factorization `G = L L^T`
/// over a growing/shrinking ordered subset of columns of a symmetric
/// positive definite matrix. Appending a column is a bordered update,
/// removing one re-triangularizes the trailing block with Givens rotations;
/// both are exact and cost `O(m^2)`.
#[derive(Clone, Debug, Default)]
pub struct CholeskyUpdater {
    /// Row i holds `L[i][0..=i]`.
    rows: Vec<Vec<f64>>,
    /// External ids of the columns, in factor order.
    pub order: Vec<usize>,
}

impl CholeskyUpdater {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.order.iter().position(|o| *o == id)
    }

    /// Appends column `id`; `cross[k]` is the matrix entry against the k-th
    /// column in factor order and `diag` the diagonal entry. Returns the
    /// pivot `d = diag - w^T w`; the column is not added when `d <= tol`
    /// (numerically dependent) and `None` is returned.
    pub fn try_push(&mut self, id: usize, cross: &[f64], diag: f64, tol: f64) -> Option<f64> {
        debug_assert_eq!(cross.len(), self.len());
        let m = self.len();
        // w = L^{-1} cross
        let mut w = cross.to_vec();
        for i in 0..m {
            let mut s = w[i];
            for k in 0..i {
                s -= self.rows[i][k] * w[k];
            }
            w[i] = s / self.rows[i][i];
        }
        let d = diag - w.iter().map(|v| v * v).sum::<f64>();
        if d <= tol {
            return None;
        }
        w.push(d.sqrt());
        self.rows.push(w);
        self.order.push(id);
        Some(d)
    }

    /// Removes the column at factor position `p`.
    pub fn remove_at(&mut self, p: usize) {
        let m = self.len();
        assert!(p < m);
        self.rows.remove(p);
        self.order.remove(p);
        // rows p.. now carry one extra entry (former column p+1 alignment):
        // re-triangularize columns p.. with Givens rotations applied to all
        // remaining rows
        for j in p..self.order.len() {
            // zero out entry (j, j+1) against (j, j)
            let a = self.rows[j][j];
            let b = self.rows[j][j + 1];
            let r = (a * a + b * b).sqrt();
            if r == 0.0 {
                continue;
            }
            let (c, s) = (a / r, b / r);
            for row in self.rows[j..].iter_mut() {
                let x = row[j];
                let y = row[j + 1];
                row[j] = c * x + s * y;
                row[j + 1] = -s * x + c * y;
            }
            // enforce a positive diagonal for stability of later solves
            if self.rows[j][j] < 0.0 {
                for row in self.rows[j..].iter_mut() {
                    row[j] = -row[j];
                }
            }
        }
        for (i, row) in self.rows.iter_mut().enumerate() {
            row.truncate(i + 1);
        }
    }

    /// Solves `G x = rhs` through the factor (rhs in factor order).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.len();
        debug_assert_eq!(rhs.len(), m);
        let mut x = rhs.to_vec();
        for i in 0..m {
            let mut s = x[i];
            for k in 0..i {
                s -= self.rows[i][k] * x[k];
            }
            x[i] = s / self.rows[i][i];
        }
        for i in (0..m).rev() {
            let mut s = x[i];
            for k in i + 1..m {
                s -= self.rows[k][i] * x[k];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }

    /// The Schur pivot `diag - w^T w` of a would-be append, without
    /// modifying the factor.
    pub fn probe_pivot(&self, cross: &[f64], diag: f64) -> f64 {
        let m = self.len();
        let mut w = cross.to_vec();
        for i in 0..m {
            let mut s = w[i];
            for k in 0..i {
                s -= self.rows[i][k] * w[k];
            }
            w[i] = s / self.rows[i][i];
        }
        diag - w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// A sparse vector: sorted global indices with values, used for locally
/// supported basis, snapshot, and partition-of-unity columns.
#[derive(Clone, Debug, Default)]
pub struct LocalVector {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl LocalVector {
    pub fn new(idx: Vec<usize>, val: Vec<f64>) -> Self {
        debug_assert_eq!(idx.len(), val.len());
        debug_assert!(idx.windows(2).all(|w| w[0] < w[1]), "indices must ascend");
        LocalVector { idx, val }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Dot product against a dense vector.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.val)
            .map(|(i, v)| v * dense[*i])
            .sum()
    }

    /// `out[idx] += scale * val`
    pub fn scatter_add(&self, scale: f64, out: &mut [f64]) {
        for (i, v) in self.idx.iter().zip(&self.val) {
            out[*i] += scale * v;
        }
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.scatter_add(1.0, &mut out);
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.val {
            *v *= s;
        }
    }
}

// ---- vector helpers ----

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SparseOperator {
        let mut tb = TripletBuilder::new();
        for i in 0..n {
            tb.add(i, i, 2.0);
            if i > 0 {
                tb.add(i, i - 1, -1.0);
                tb.add(i - 1, i, -1.0);
            }
        }
        tb.build(n, n, true)
    }

    #[test]
    fn matvec_and_solve_roundtrip() {
        let a = laplacian_1d(20);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.matvec(&x);
        let f = a.factorize().unwrap();
        let y = f.solve(&b);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((xi - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_triplets_accumulate() {
        let mut tb = TripletBuilder::new();
        tb.add(0, 0, 1.0);
        tb.add(0, 0, 2.0);
        let a = tb.build(1, 1, true);
        assert_eq!(a.to_dense()[(0, 0)], 3.0);
    }

    #[test]
    fn submatrix_extracts_renumbered_block() {
        let a = laplacian_1d(5);
        let sub = a.submatrix(&[1, 2], &[1, 2, 3]);
        let d = sub.to_dense();
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(1, 0)], -1.0);
        assert_eq!(d[(0, 1)], -1.0);
        assert_eq!(d[(1, 2)], -1.0);
    }

    #[test]
    fn scatter_mul_matches_matvec() {
        let a = laplacian_1d(6);
        let mut x = vec![0.0; 6];
        x[2] = 1.5;
        x[4] = -0.5;
        let full = a.matvec(&x);
        let mut out = vec![0.0; 6];
        a.scatter_mul(&[2, 4], &[1.5, -0.5], &mut out);
        assert_eq!(full, out);
    }

    #[test]
    fn generalized_eigen_matches_hand_2x2() {
        // A = [[2,0],[0,8]], S = [[1,0],[0,4]]: eigenvalues 2 and 2 -> use
        // distinct ones instead: A = diag(2, 12), S = diag(1, 4) -> 2, 3
        let a = Mat::from_fn(2, 2, |i, j| {
            if i == j {
                if i == 0 {
                    2.0
                } else {
                    12.0
                }
            } else {
                0.0
            }
        });
        let s = Mat::from_fn(2, 2, |i, j| {
            if i == j {
                if i == 0 {
                    1.0
                } else {
                    4.0
                }
            } else {
                0.0
            }
        });
        let (eigs, vecs) = generalized_symmetric_eigen(&a, &s).unwrap();
        assert!((eigs[0] - 2.0).abs() < 1e-12);
        assert!((eigs[1] - 3.0).abs() < 1e-12);
        // S-orthonormality
        for i in 0..2 {
            for j in 0..2 {
                let mut q = 0.0;
                for k in 0..2 {
                    q += vecs[(k, i)] * s[(k, k)] * vecs[(k, j)];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((q - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_updater_tracks_push_and_remove() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        // SPD matrix
        let p = Mat::<f64>::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let mut g = &p * &p.transpose().to_owned();
        for i in 0..n {
            g[(i, i)] += n as f64;
        }
        let mut upd = CholeskyUpdater::new();
        let mut active: Vec<usize> = Vec::new();
        let mut check = |upd: &CholeskyUpdater, active: &[usize], rng: &mut rand_chacha::ChaCha8Rng| {
            if active.is_empty() {
                return;
            }
            let rhs: Vec<f64> = (0..active.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            // rhs ordered by factor order
            let rhs_factor: Vec<f64> = upd
                .order
                .iter()
                .map(|id| rhs[active.iter().position(|a| a == id).unwrap()])
                .collect();
            let x_factor = upd.solve(&rhs_factor);
            // dense oracle on the subset
            let m = active.len();
            let sub = Mat::from_fn(m, m, |i, j| g[(active[i], active[j])]);
            let x_ref = dense_solve(&sub, &rhs).unwrap();
            for (k, id) in upd.order.iter().enumerate() {
                let pos = active.iter().position(|a| a == id).unwrap();
                assert!(
                    (x_factor[k] - x_ref[pos]).abs() < 1e-9,
                    "mismatch at col {id}"
                );
            }
        };
        // push 0..8
        for id in 0..8 {
            let cross: Vec<f64> = upd.order.iter().map(|o| g[(*o, id)]).collect();
            assert!(upd.try_push(id, &cross, g[(id, id)], 1e-12).is_some());
            active.push(id);
        }
        check(&upd, &active, &mut rng);
        // remove a middle and the first column
        upd.remove_at(3);
        active.remove(3);
        check(&upd, &active, &mut rng);
        upd.remove_at(0);
        active.remove(0);
        check(&upd, &active, &mut rng);
        // push two more
        for id in [9usize, 11] {
            let cross: Vec<f64> = upd.order.iter().map(|o| g[(*o, id)]).collect();
            assert!(upd.try_push(id, &cross, g[(id, id)], 1e-12).is_some());
            active.push(id);
        }
        check(&upd, &active, &mut rng);
    }

    #[test]
    fn cholesky_updater_rejects_dependent_column() {
        // G for columns [e, e] has an exactly dependent second column
        let mut upd = CholeskyUpdater::new();
        assert!(upd.try_push(0, &[], 1.0, 1e-12).is_some());
        assert!(upd.try_push(1, &[1.0], 1.0, 1e-12).is_none());
        assert_eq!(upd.len(), 1);
        // probe agrees
        assert!(upd.probe_pivot(&[1.0], 1.0).abs() < 1e-14);
        assert!((upd.probe_pivot(&[0.0], 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn generalized_eigen_matches_dense_oracle_random() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 8;
        let m = Mat::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let a = &m + &m.transpose().to_owned();
        let p = Mat::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let mut s = &p * &p.transpose().to_owned();
        for i in 0..n {
            s[(i, i)] += n as f64;
        }
        let (eigs, vecs) = generalized_symmetric_eigen(&a, &s).unwrap();
        for j in 0..n {
            // residual ||A x - lambda S x|| should vanish
            let mut r = 0.0;
            for i in 0..n {
                let mut ax = 0.0;
                let mut sx = 0.0;
                for k in 0..n {
                    ax += a[(i, k)] * vecs[(k, j)];
                    sx += s[(i, k)] * vecs[(k, j)];
                }
                r += (ax - eigs[j] * sx).powi(2);
            }
            assert!(r.sqrt() < 1e-8, "residual {} for pair {j}", r.sqrt());
        }
        for j in 1..n {
            assert!(eigs[j] >= eigs[j - 1]);
        }
    }
}
