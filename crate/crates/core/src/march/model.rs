//! Reduced interval models implementing [`IntervalModel`] for the three
//! formulations: a generic one-step linear model (CG and mixed, both
//! posterior variants that anchor on known fine states) and the wave model
//! that marches several explicit sub-steps per interval.

use faer::Mat;

use crate::fem::cg::CgSpace;
use crate::fem::mixed::MixedSpace;
use crate::linalg::{LocalVector, SparseOperator};
use crate::mesh::MeshHierarchy;
use crate::residual::ResidualVector;
use crate::sampler::{CandidateRef, IntervalModel, IntervalSolution};
use crate::{Error, Result};

// ---- dof conversions for catalog columns ----

/// Full-node column -> Dirichlet-eliminated interior dofs.
pub fn nodal_to_interior(col: &LocalVector, space: &CgSpace) -> LocalVector {
    let (idx, val): (Vec<usize>, Vec<f64>) = col
        .idx
        .iter()
        .zip(&col.val)
        .filter_map(|(n, v)| {
            let d = space.node_to_dof[*n];
            (d != usize::MAX && *v != 0.0).then_some((d, *v))
        })
        .unzip();
    LocalVector::new(idx, val)
}

/// Full-node column -> broken (per-cell corner) dofs.
pub fn nodal_to_broken(col: &LocalVector, hierarchy: &MeshHierarchy) -> LocalVector {
    let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(4 * col.len());
    for (n, v) in col.idx.iter().zip(&col.val) {
        if *v == 0.0 {
            continue;
        }
        let i = n % (hierarchy.nx_fine + 1);
        let j = n / (hierarchy.nx_fine + 1);
        // the node is corner (bl, br, tr, tl) = (0, 1, 2, 3) of up to 4 cells
        if i < hierarchy.nx_fine && j < hierarchy.ny_fine {
            pairs.push((4 * hierarchy.fine_cell_id(i, j), *v));
        }
        if i > 0 && j < hierarchy.ny_fine {
            pairs.push((4 * hierarchy.fine_cell_id(i - 1, j) + 1, *v));
        }
        if i > 0 && j > 0 {
            pairs.push((4 * hierarchy.fine_cell_id(i - 1, j - 1) + 2, *v));
        }
        if i < hierarchy.nx_fine && j > 0 {
            pairs.push((4 * hierarchy.fine_cell_id(i, j - 1) + 3, *v));
        }
    }
    pairs.sort_unstable_by_key(|(d, _)| *d);
    let (idx, val) = pairs.into_iter().unzip();
    LocalVector::new(idx, val)
}

/// Full-edge column -> no-flux-eliminated interior edge dofs.
pub fn edge_to_interior(col: &LocalVector, space: &MixedSpace) -> LocalVector {
    let (idx, val): (Vec<usize>, Vec<f64>) = col
        .idx
        .iter()
        .zip(&col.val)
        .filter_map(|(e, v)| {
            let d = space.edge_to_dof[*e];
            (d != usize::MAX && *v != 0.0).then_some((d, *v))
        })
        .unzip();
    LocalVector::new(idx, val)
}

// ---- reduced assembly helpers ----

fn index_range(col: &LocalVector) -> (usize, usize) {
    if col.is_empty() {
        (1, 0)
    } else {
        (col.idx[0], *col.idx.last().unwrap())
    }
}

/// Clears the previously written window and applies the operator; `reach`
/// bounds how far (in dof indices) the operator image can extend beyond a
/// column's own index range, so disjoint pairs can be skipped safely.
fn apply_windowed(
    col: &LocalVector,
    scratch: &mut [f64],
    dirty: &mut (usize, usize),
    reach: usize,
    apply: &impl Fn(&LocalVector, &mut [f64]),
) {
    if dirty.0 <= dirty.1 {
        for v in &mut scratch[dirty.0..=dirty.1] {
            *v = 0.0;
        }
    }
    apply(col, scratch);
    let n = scratch.len();
    let (lo, hi) = index_range(col);
    if lo > hi {
        *dirty = (1, 0);
        return;
    }
    *dirty = (lo.saturating_sub(reach), (hi.saturating_add(reach)).min(n - 1));
}

/// `Phi^T op Phi` with `op` given as an apply-into-scratch closure;
/// symmetric, with pairs of provably disjoint support skipped. `reach` is
/// the operator's maximal stencil extent in dof indices (`usize::MAX`
/// disables the skipping).
pub fn reduced_matrix(
    cols: &[LocalVector],
    n_dofs: usize,
    reach: usize,
    apply: impl Fn(&LocalVector, &mut [f64]),
) -> Mat<f64> {
    let m = cols.len();
    let ranges: Vec<(usize, usize)> = cols.iter().map(index_range).collect();
    let mut out = Mat::<f64>::zeros(m, m);
    let mut scratch = vec![0.0; n_dofs];
    let mut dirty = (1usize, 0usize);
    for j in 0..m {
        apply_windowed(&cols[j], &mut scratch, &mut dirty, reach, &apply);
        for i in j..m {
            if ranges[i].0 > dirty.1 || ranges[i].1 < dirty.0 {
                continue;
            }
            let v = cols[i].dot_dense(&scratch);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `Psi^T op Phi` (test rows by trial columns), disjoint pairs skipped.
pub fn reduced_cross(
    test_cols: &[LocalVector],
    cols: &[LocalVector],
    n_dofs: usize,
    reach: usize,
    apply: impl Fn(&LocalVector, &mut [f64]),
) -> Mat<f64> {
    let ranges: Vec<(usize, usize)> = test_cols.iter().map(index_range).collect();
    let mut out = Mat::<f64>::zeros(test_cols.len(), cols.len());
    let mut scratch = vec![0.0; n_dofs];
    let mut dirty = (1usize, 0usize);
    for (j, col) in cols.iter().enumerate() {
        apply_windowed(col, &mut scratch, &mut dirty, reach, &apply);
        for (i, t) in test_cols.iter().enumerate() {
            if ranges[i].0 > dirty.1 || ranges[i].1 < dirty.0 {
                continue;
            }
            out[(i, j)] = t.dot_dense(&scratch);
        }
    }
    out
}

pub fn project_columns(cols: &[LocalVector], fine: &[f64]) -> Vec<f64> {
    cols.iter().map(|c| c.dot_dense(fine)).collect()
}

/// Normalized Euclidean Gram matrix of sparse columns.
pub fn column_gram(cols: &[LocalVector]) -> Mat<f64> {
    let m = cols.len();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| crate::linalg::norm2(&c.val).max(1e-300))
        .collect();
    let mut g = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = sparse_dot(&cols[i], &cols[j]) / (norms[i] * norms[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn sparse_dot(a: &LocalVector, b: &LocalVector) -> f64 {
    let mut s = 0.0;
    let mut i = 0;
    let mut j = 0;
    while i < a.idx.len() && j < b.idx.len() {
        match a.idx[i].cmp(&b.idx[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a.val[i] * b.val[j];
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Solves the dense SPD-expected reduced system; on a numerically singular
/// system, drops the candidate column most aligned with the smallest
/// singular direction and re-solves, per the near-singularity contract.
/// Returns the solution with zeros at dropped positions.
pub fn solve_reduced_guarded(
    c: &Mat<f64>,
    rhs: &[f64],
    droppable: &[bool],
) -> Result<Vec<f64>> {
    let n = c.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Ok(llt) = c.llt(faer::Side::Lower) {
        let b = Mat::from_fn(n, 1, |i, _| rhs[i]);
        let x = faer::linalg::solvers::Solve::solve(&llt, &b);
        let sol: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol);
        }
    }
    // singular or indefinite: inspect the smallest singular direction
    let svd = c
        .svd()
        .map_err(|_| Error::solver("reduced system SVD failed"))?;
    let smin = svd.S()[n - 1];
    let smax = svd.S()[0];
    if smax <= 0.0 {
        return Ok(vec![0.0; n]);
    }
    if smin / smax > 1e-12 {
        // invertible after all, solve through the SVD
        let mut sol = vec![0.0; n];
        for k in 0..n {
            let mut uy = 0.0;
            for i in 0..n {
                uy += svd.U()[(i, k)] * rhs[i];
            }
            let w = uy / svd.S()[k];
            for i in 0..n {
                sol[i] += svd.V()[(i, k)] * w;
            }
        }
        return Ok(sol);
    }
    // drop the droppable column with the largest weight in the null direction
    let drop = (0..n)
        .filter(|i| droppable[*i])
        .max_by(|a, b| {
            svd.V()[(*a, n - 1)]
                .abs()
                .partial_cmp(&svd.V()[(*b, n - 1)].abs())
                .unwrap()
        })
        .ok_or_else(|| Error::solver("reduced system singular with no droppable column"))?;
    eprintln!(
        "note: reduced system near-singular (smin/smax = {:.2e}); dropping column {drop}",
        smin / smax
    );
    let keep: Vec<usize> = (0..n).filter(|i| *i != drop).collect();
    let sub = Mat::from_fn(n - 1, n - 1, |i, j| c[(keep[i], keep[j])]);
    let sub_rhs: Vec<f64> = keep.iter().map(|i| rhs[*i]).collect();
    let sub_drop: Vec<bool> = keep.iter().map(|i| droppable[*i]).collect();
    let sub_sol = solve_reduced_guarded(&sub, &sub_rhs, &sub_drop)?;
    let mut sol = vec![0.0; n];
    for (k, i) in keep.iter().enumerate() {
        sol[*i] = sub_sol[k];
    }
    Ok(sol)
}

// ---- generic one-step linear model ----

/// A one-step reduced model `r(beta) = base - T_op beta` with Galerkin
/// system `C beta = rhs` over the active columns. Covers the CG and mixed
/// formulations in both posterior variants: anchored contributions
/// (fixed-solution or previous-state data) are folded into `base`/`rhs`,
/// and `always_on` leading solve columns (re-solved permanent basis) are
/// active in every configuration.
pub struct LinearIntervalModel {
    pub interval: usize,
    /// Region ids, slice-aligned with the test space.
    pub region_ids: Vec<usize>,
    pub cands: Vec<CandidateRef>,
    /// Leading solve columns active in every configuration.
    pub always_on: usize,
    /// Trial columns in solver dofs (solve-column order).
    pub columns: Vec<LocalVector>,
    /// Dense reduced operator over solve columns.
    pub c_mat: Mat<f64>,
    pub rhs: Vec<f64>,
    /// Test coordinates of the affine residual part.
    pub base_coords: Vec<f64>,
    /// Test-by-solve-column operator images.
    pub t_op: Mat<f64>,
    pub test_offsets: Vec<usize>,
    /// Candidate images in test coordinates (mass pairing), per candidate.
    pub cand_images: Mat<f64>,
    /// Normalized Gram of permanent + candidate fine columns; candidates sit
    /// at `gram_cand_offset + k`.
    pub gram: Mat<f64>,
    pub gram_cand_offset: usize,
    /// Gram rows/cols of permanent columns (always in the active basis).
    pub gram_permanent: Vec<usize>,
    /// Field added to the reconstruction (anchored fixed state), if any.
    pub offset_field: Option<Vec<f64>>,
    pub n_dofs: usize,
    /// Oracle field at interval end and the norm operator for errors.
    pub oracle: Option<Vec<f64>>,
    pub snapshot_ref: Option<Vec<f64>>,
    pub error_op: SparseOperator,
    /// Cached permanent-only residual.
    pub base_residual: ResidualVector,
}

impl LinearIntervalModel {
    fn solve_columns(&self, active: &[bool]) -> Vec<usize> {
        let mut cols: Vec<usize> = (0..self.always_on).collect();
        for (k, on) in active.iter().enumerate() {
            if *on {
                cols.push(self.always_on + k);
            }
        }
        cols
    }

    pub fn residual_of(&self, cols: &[usize], beta: &[f64]) -> ResidualVector {
        let mut coords = self.base_coords.clone();
        for (k, c) in cols.iter().enumerate() {
            let b = beta[k];
            if b != 0.0 {
                for i in 0..coords.len() {
                    coords[i] -= self.t_op[(i, *c)] * b;
                }
            }
        }
        ResidualVector {
            coords,
            offsets: self.test_offsets.clone(),
            interval: self.interval,
        }
    }
}

impl IntervalModel for LinearIntervalModel {
    fn n_region_slots(&self) -> usize {
        self.region_ids.len()
    }

    fn region_id(&self, slot: usize) -> usize {
        self.region_ids[slot]
    }

    fn candidates(&self) -> &[CandidateRef] {
        &self.cands
    }

    fn solve_beta(&self, active: &[bool]) -> Result<IntervalSolution> {
        let cols = self.solve_columns(active);
        let m = cols.len();
        let c = Mat::from_fn(m, m, |i, j| self.c_mat[(cols[i], cols[j])]);
        let rhs: Vec<f64> = cols.iter().map(|c| self.rhs[*c]).collect();
        let droppable: Vec<bool> = cols.iter().map(|c| *c >= self.always_on).collect();
        let beta = solve_reduced_guarded(&c, &rhs, &droppable)?;
        let residual = self.residual_of(&cols, &beta);
        let residual_norm = residual.global_norm();
        Ok(IntervalSolution {
            active: active.to_vec(),
            beta,
            residual,
            residual_norm,
        })
    }

    fn gram(&self) -> &Mat<f64> {
        &self.gram
    }

    fn gram_columns(&self, active: &[bool]) -> Vec<usize> {
        let mut cols = self.gram_permanent.clone();
        for (k, on) in active.iter().enumerate() {
            if *on {
                cols.push(self.gram_cand_offset + k);
            }
        }
        cols
    }

    fn gram_column_of_candidate(&self, cand: usize) -> usize {
        self.gram_cand_offset + cand
    }

    fn candidate_images(&self, slot: usize) -> Vec<Vec<f64>> {
        let range = self.test_offsets[slot]..self.test_offsets[slot + 1];
        self.cands
            .iter()
            .enumerate()
            .filter(|(_, c)| c.region_slot == slot)
            .map(|(k, _)| range.clone().map(|i| self.cand_images[(i, k)]).collect())
            .collect()
    }

    fn base_residual(&self) -> &ResidualVector {
        &self.base_residual
    }

    fn reconstruct(&self, sol: &IntervalSolution) -> Vec<f64> {
        let mut field = self
            .offset_field
            .clone()
            .unwrap_or_else(|| vec![0.0; self.n_dofs]);
        let cols = self.solve_columns(&sol.active);
        for (k, c) in cols.iter().enumerate() {
            self.columns[*c].scatter_add(sol.beta[k], &mut field);
        }
        field
    }

    fn errors(&self, sol: &IntervalSolution) -> (Option<f64>, Option<f64>) {
        let field = self.reconstruct(sol);
        let err = self
            .oracle
            .as_ref()
            .map(|r| relative_error(&field, r, &self.error_op));
        let err_snap = self
            .snapshot_ref
            .as_ref()
            .map(|r| relative_error(&field, r, &self.error_op));
        (err, err_snap)
    }

    fn linear_parts(&self) -> Option<crate::sampler::LinearParts<'_>> {
        Some(crate::sampler::LinearParts {
            c_mat: &self.c_mat,
            rhs: &self.rhs,
            t_op: &self.t_op,
            base: &self.base_coords,
            always_on: self.always_on,
            offsets: &self.test_offsets,
        })
    }
}

pub fn relative_error(field: &[f64], reference: &[f64], norm_op: &SparseOperator) -> f64 {
    let e: Vec<f64> = field.iter().zip(reference).map(|(a, b)| a - b).collect();
    let num = norm_op.form(&e, &e).max(0.0).sqrt();
    let den = norm_op.form(reference, reference).max(0.0).sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

// ---- wave interval model ----

/// One coarse wave interval: several explicit central-difference sub-steps
/// in the reduced space spanned by permanent plus active candidate columns,
/// with the residual of the last sub-step tested against the snapshots.
pub struct WaveIntervalModel {
    pub interval: usize,
    pub region_ids: Vec<usize>,
    pub cands: Vec<CandidateRef>,
    pub n_perm: usize,
    pub columns: std::sync::Arc<Vec<LocalVector>>,
    // reduced blocks over all columns (shared across trajectory models)
    pub m_red: std::sync::Arc<Mat<f64>>,
    pub a_red: std::sync::Arc<Mat<f64>>,
    pub f_red: Vec<f64>,
    // test pairings
    pub t_m: std::sync::Arc<Mat<f64>>,
    pub t_a: std::sync::Arc<Mat<f64>>,
    pub f_test: Vec<f64>,
    pub test_offsets: Vec<usize>,
    pub cand_images: std::sync::Arc<Mat<f64>>,
    // entering fine states projected: Phi^T M u
    pub proj_curr: Vec<f64>,
    pub proj_prev: Vec<f64>,
    pub dt: f64,
    pub n_steps: usize,
    pub gram: std::sync::Arc<Mat<f64>>,
    pub n_dofs: usize,
    pub oracle: Option<Vec<f64>>,
    pub snapshot_ref: Option<Vec<f64>>,
    pub error_op: SparseOperator,
    pub base_residual: ResidualVector,
}

impl WaveIntervalModel {
    fn active_columns(&self, active: &[bool]) -> Vec<usize> {
        let mut cols: Vec<usize> = (0..self.n_perm).collect();
        for (k, on) in active.iter().enumerate() {
            if *on {
                cols.push(self.n_perm + k);
            }
        }
        cols
    }

    /// Marches the interval on the active columns; returns the last three
    /// reduced levels `(last, last-1, last-2)` in the full `cols` layout.
    /// Numerically dependent columns are dropped (their coefficients stay
    /// zero), matching the guarded-solve contract.
    fn march_reduced(&self, cols: &[usize]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        // identify an independent subset through an incremental factorization
        let mut upd = crate::linalg::CholeskyUpdater::new();
        let mut kept: Vec<usize> = Vec::with_capacity(cols.len());
        let mut kept_pos: Vec<usize> = Vec::with_capacity(cols.len());
        for (p, c) in cols.iter().enumerate() {
            let cross: Vec<f64> = kept.iter().map(|k| self.m_red[(*k, *c)]).collect();
            let diag = self.m_red[(*c, *c)];
            if upd
                .try_push(p, &cross, diag, 1e-12 * diag.abs().max(1e-300))
                .is_some()
            {
                kept.push(*c);
                kept_pos.push(p);
            } else {
                eprintln!("note: wave reduced mass: dropping dependent column {c}");
            }
        }
        let m = kept.len();
        if m == 0 {
            return Err(Error::solver("wave reduced mass has no independent columns"));
        }
        let asub = Mat::from_fn(m, m, |i, j| self.a_red[(kept[i], kept[j])]);
        let msub = Mat::from_fn(m, m, |i, j| self.m_red[(kept[i], kept[j])]);
        let solve = |rhs_kept: &[f64]| -> Vec<f64> { upd.solve(rhs_kept) };
        // project entering states onto the active span (kept subspace)
        let mut prev = solve(&kept.iter().map(|c| self.proj_prev[*c]).collect::<Vec<_>>());
        let mut curr = solve(&kept.iter().map(|c| self.proj_curr[*c]).collect::<Vec<_>>());
        let mut prev2 = prev.clone();
        let f_sub: Vec<f64> = kept.iter().map(|c| self.f_red[*c]).collect();
        let matmul = |mat: &Mat<f64>, v: &[f64]| -> Vec<f64> {
            (0..m)
                .map(|i| (0..m).map(|j| mat[(i, j)] * v[j]).sum())
                .collect()
        };
        for _ in 0..self.n_steps {
            let m_curr = matmul(&msub, &curr);
            let m_prev = matmul(&msub, &prev);
            let a_curr = matmul(&asub, &curr);
            let rhs: Vec<f64> = (0..m)
                .map(|i| 2.0 * m_curr[i] - m_prev[i] + self.dt * self.dt * (f_sub[i] - a_curr[i]))
                .collect();
            let next = solve(&rhs);
            prev2 = std::mem::replace(&mut prev, std::mem::replace(&mut curr, next));
        }
        // expand back to the full cols layout with zeros at dropped positions
        let expand = |v: Vec<f64>| -> Vec<f64> {
            let mut full = vec![0.0; cols.len()];
            for (k, p) in kept_pos.iter().enumerate() {
                full[*p] = v[k];
            }
            full
        };
        Ok((expand(curr), expand(prev), expand(prev2)))
    }

    /// Marches the interval on an explicit column set and reconstructs the
    /// final-level fine field (used for the snapshot-space reference).
    pub fn reference_on(&self, cols: &[usize]) -> Result<Vec<f64>> {
        let (last, _, _) = self.march_reduced(cols)?;
        let mut field = vec![0.0; self.n_dofs];
        for (k, c) in cols.iter().enumerate() {
            self.columns[*c].scatter_add(last[k], &mut field);
        }
        Ok(field)
    }

    /// Fine exit states (current, previous levels) for chaining intervals.
    pub fn exit_fine_states(&self, sol: &IntervalSolution) -> (Vec<f64>, Vec<f64>) {
        let cols = self.active_columns(&sol.active);
        let m = cols.len();
        let mut curr = vec![0.0; self.n_dofs];
        let mut prev = vec![0.0; self.n_dofs];
        for (k, c) in cols.iter().enumerate() {
            self.columns[*c].scatter_add(sol.beta[k], &mut curr);
            self.columns[*c].scatter_add(sol.beta[m + k], &mut prev);
        }
        (curr, prev)
    }
}

impl IntervalModel for WaveIntervalModel {
    fn n_region_slots(&self) -> usize {
        self.region_ids.len()
    }

    fn region_id(&self, slot: usize) -> usize {
        self.region_ids[slot]
    }

    fn candidates(&self) -> &[CandidateRef] {
        &self.cands
    }

    fn solve_beta(&self, active: &[bool]) -> Result<IntervalSolution> {
        let cols = self.active_columns(active);
        let (last, mid, old) = self.march_reduced(&cols)?;
        // residual of the last completed step: levels (last, mid, old)
        let nt = self.f_test.len();
        let mut coords = vec![0.0; nt];
        for i in 0..nt {
            let mut acc = 0.0;
            let mut stiff = 0.0;
            for (k, c) in cols.iter().enumerate() {
                acc += self.t_m[(i, *c)] * (last[k] - 2.0 * mid[k] + old[k]);
                stiff += self.t_a[(i, *c)] * mid[k];
            }
            coords[i] = acc / (self.dt * self.dt) + stiff - self.f_test[i];
        }
        let residual = ResidualVector {
            coords,
            offsets: self.test_offsets.clone(),
            interval: self.interval,
        };
        let residual_norm = residual.global_norm();
        // the two trailing levels chain into the next interval
        let mut beta = last;
        beta.extend_from_slice(&mid);
        Ok(IntervalSolution {
            active: active.to_vec(),
            beta,
            residual,
            residual_norm,
        })
    }

    fn gram(&self) -> &Mat<f64> {
        &self.gram
    }

    fn gram_columns(&self, active: &[bool]) -> Vec<usize> {
        self.active_columns(active)
    }

    fn gram_column_of_candidate(&self, cand: usize) -> usize {
        self.n_perm + cand
    }

    fn candidate_images(&self, slot: usize) -> Vec<Vec<f64>> {
        let range = self.test_offsets[slot]..self.test_offsets[slot + 1];
        self.cands
            .iter()
            .enumerate()
            .filter(|(_, c)| c.region_slot == slot)
            .map(|(k, _)| range.clone().map(|i| self.cand_images[(i, k)]).collect())
            .collect()
    }

    fn base_residual(&self) -> &ResidualVector {
        &self.base_residual
    }

    fn reconstruct(&self, sol: &IntervalSolution) -> Vec<f64> {
        let cols = self.active_columns(&sol.active);
        let mut field = vec![0.0; self.n_dofs];
        for (k, c) in cols.iter().enumerate() {
            self.columns[*c].scatter_add(sol.beta[k], &mut field);
        }
        field
    }

    fn errors(&self, sol: &IntervalSolution) -> (Option<f64>, Option<f64>) {
        let field = self.reconstruct(sol);
        let err = self
            .oracle
            .as_ref()
            .map(|r| relative_error(&field, r, &self.error_op));
        let err_snap = self
            .snapshot_ref
            .as_ref()
            .map(|r| relative_error(&field, r, &self.error_op));
        (err, err_snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;

    #[test]
    fn nodal_to_broken_copies_corner_values() {
        let h = build_hierarchy(2, 2, 1, 1, 1.0, 1.0).unwrap();
        // center node (1,1) = node 4 touches all four cells
        let col = LocalVector::new(vec![4], vec![2.5]);
        let broken = nodal_to_broken(&col, &h);
        // cell 0 tr (idx 2), cell 1 tl (3), cell 2 br (1), cell 3 bl (0)
        assert_eq!(broken.idx, vec![2, 4 + 3, 8 + 1, 12]);
        assert!(broken.val.iter().all(|v| *v == 2.5));
    }

    #[test]
    fn sparse_dot_matches_dense() {
        let a = LocalVector::new(vec![1, 3, 7], vec![1.0, 2.0, 3.0]);
        let b = LocalVector::new(vec![3, 7, 9], vec![5.0, -1.0, 10.0]);
        assert_eq!(sparse_dot(&a, &b), 2.0 * 5.0 + 3.0 * (-1.0));
    }

    #[test]
    fn guarded_solve_drops_dependent_candidate() {
        // two identical columns: the system is singular; the droppable one
        // must be eliminated and the solve succeed
        let c = Mat::from_fn(2, 2, |_, _| 1.0);
        let sol = solve_reduced_guarded(&c, &[1.0, 1.0], &[false, true]).unwrap();
        assert!((sol[0] - 1.0).abs() < 1e-10);
        assert_eq!(sol[1], 0.0);
    }
}
