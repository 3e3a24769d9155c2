//! Discrete residuals tested against per-region snapshot spaces, and the
//! local/global norms that drive priors, likelihoods, and diagnostics.
//!
//! Test vectors are mass-orthonormalized within each region so that local
//! norms are comparable across regions and the wave-style normalized
//! variant reduces to a maximum over the slice.

use crate::linalg::{LocalVector, SparseOperator};
use crate::{Error, Result};

/// The concatenated test space: per region, mass-orthonormalized columns in
/// solver dof indexing.
#[derive(Clone, Debug)]
pub struct TestSpace {
    /// Region ids in slice order.
    pub regions: Vec<usize>,
    /// Flattened test columns; region r owns `offsets[r]..offsets[r+1]`.
    pub columns: Vec<LocalVector>,
    pub offsets: Vec<usize>,
    /// Solver dof count (length of fine functional vectors).
    pub n_dofs: usize,
}

impl TestSpace {
    /// Orthonormalizes the given per-region columns in the `mass` inner
    /// product and assembles the concatenated space. Columns that lose rank
    /// during orthonormalization are dropped with a warning.
    pub fn build(
        region_columns: Vec<(usize, Vec<LocalVector>)>,
        mass: &SparseOperator,
    ) -> TestSpace {
        let n_dofs = mass.nrows();
        let mut regions = Vec::with_capacity(region_columns.len());
        let mut columns = Vec::new();
        let mut offsets = vec![0];
        for (region, cols) in region_columns {
            // kept columns paired with their sparse mass images
            let mut kept: Vec<(LocalVector, LocalVector)> = Vec::with_capacity(cols.len());
            for (k, col) in cols.into_iter().enumerate() {
                let mut dense = col.to_dense(n_dofs);
                // M-orthogonalize against the kept columns of this region
                for (prev, m_prev) in &kept {
                    let proj = m_prev.dot_dense(&dense);
                    prev.scatter_add(-proj, &mut dense);
                }
                let (idx, val): (Vec<usize>, Vec<f64>) = dense
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v))
                    .unzip();
                let cand = LocalVector::new(idx, val);
                let m_cand = mass.mul_local(&cand);
                let nrm = m_cand.dot_dense(&dense).max(0.0).sqrt();
                if nrm < 1e-10 {
                    eprintln!(
                        "warning: region {region}: test column {k} lost rank during \
                         orthonormalization; dropped"
                    );
                    continue;
                }
                let mut cand = cand;
                let mut m_cand = m_cand;
                cand.scale(1.0 / nrm);
                m_cand.scale(1.0 / nrm);
                kept.push((cand, m_cand));
            }
            columns.extend(kept.into_iter().map(|(c, _)| c));
            regions.push(region);
            offsets.push(columns.len());
        }
        TestSpace {
            regions,
            columns,
            offsets,
            n_dofs,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn region_slice(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    /// Tests a fine functional vector: `coords[k] = column_k . functional`.
    pub fn test(&self, fine_functional: &[f64], interval: usize) -> Result<ResidualVector> {
        if fine_functional.len() != self.n_dofs {
            return Err(Error::dim(format!(
                "test space expects {} dofs, functional has {}",
                self.n_dofs,
                fine_functional.len()
            )));
        }
        let coords = self
            .columns
            .iter()
            .map(|c| c.dot_dense(fine_functional))
            .collect();
        Ok(ResidualVector {
            coords,
            offsets: self.offsets.clone(),
            interval,
        })
    }
}

/// Residual coordinates over the concatenated test dofs, with the region
/// partition of the index set.
#[derive(Clone, Debug)]
pub struct ResidualVector {
    pub coords: Vec<f64>,
    /// Region r owns `coords[offsets[r]..offsets[r+1]]`.
    pub offsets: Vec<usize>,
    /// Time interval index this residual belongs to.
    pub interval: usize,
}

impl ResidualVector {
    pub fn n_regions(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn region_slice(&self, r: usize) -> &[f64] {
        &self.coords[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn global_norm(&self) -> f64 {
        crate::linalg::norm2(&self.coords)
    }
}

/// Per-region residual norms: discrete l2 over each slice, the sup variant
/// `max |R_v|` (test vectors have unit mass norm), and the global l2 norm.
#[derive(Clone, Debug)]
pub struct RegionNorms {
    pub l2: Vec<f64>,
    pub sup: Vec<f64>,
    pub global: f64,
}

pub fn region_norms(residual: &ResidualVector) -> RegionNorms {
    let mut l2 = Vec::with_capacity(residual.n_regions());
    let mut sup = Vec::with_capacity(residual.n_regions());
    for r in 0..residual.n_regions() {
        let slice = residual.region_slice(r);
        l2.push(crate::linalg::norm2(slice));
        sup.push(slice.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    RegionNorms {
        l2,
        sup,
        global: residual.global_norm(),
    }
}

// ---- fine residual functionals ----

/// CG parabolic residual functional at one backward-Euler step:
/// `r = M f - M (u_plus + u_fix_next - u_fix_prev) / dt - A (u_plus + u_fix_next)`.
pub fn cg_fine_residual(
    mass: &SparseOperator,
    stiffness: &SparseOperator,
    u_plus: &[f64],
    u_fix_next: &[f64],
    u_fix_prev: &[f64],
    f: &[f64],
    dt: f64,
) -> Vec<f64> {
    assert!(dt > 0.0);
    let n = mass.nrows();
    assert!(
        u_plus.len() == n && u_fix_next.len() == n && u_fix_prev.len() == n && f.len() == n,
        "residual state dimensions"
    );
    let total: Vec<f64> = u_plus
        .iter()
        .zip(u_fix_next)
        .map(|(p, x)| p + x)
        .collect();
    let du: Vec<f64> = total.iter().zip(u_fix_prev).map(|(t, p)| t - p).collect();
    let mut r = mass.matvec(f);
    let m_du = mass.matvec(&du);
    let a_tot = stiffness.matvec(&total);
    for i in 0..n {
        r[i] -= m_du[i] / dt + a_tot[i];
    }
    r
}

/// Mixed residual functional: `r = Mv (v_plus + v_fix) - B^T u_fix`,
/// with pressure in fine cell values.
pub fn mixed_fine_residual(
    mv: &SparseOperator,
    bt: &SparseOperator,
    v_plus: &[f64],
    v_fix: &[f64],
    u_fix_cells: &[f64],
) -> Vec<f64> {
    let n = mv.nrows();
    assert!(v_plus.len() == n && v_fix.len() == n, "velocity dimensions");
    let total: Vec<f64> = v_plus.iter().zip(v_fix).map(|(a, b)| a + b).collect();
    let mut r = mv.matvec(&total);
    let btu = bt.matvec(u_fix_cells);
    for i in 0..n {
        r[i] -= btu[i];
    }
    r
}

/// Wave residual functional at one central-difference step:
/// `r = M (u_next - 2 u_curr + u_prev) / dt^2 + A u_curr - M f`.
pub fn wave_fine_residual(
    mass: &SparseOperator,
    a_dg: &SparseOperator,
    u_next: &[f64],
    u_curr: &[f64],
    u_prev: &[f64],
    f: &[f64],
    dt: f64,
) -> Vec<f64> {
    assert!(dt > 0.0);
    let n = mass.nrows();
    let acc: Vec<f64> = (0..n)
        .map(|i| (u_next[i] - 2.0 * u_curr[i] + u_prev[i]) / (dt * dt))
        .collect();
    let mut r = mass.matvec(&acc);
    let au = a_dg.matvec(u_curr);
    let mf = mass.matvec(f);
    for i in 0..n {
        r[i] += au[i] - mf[i];
    }
    r
}

// ---- spec-named wrappers ----

pub fn residual_parabolic_cg(
    mass: &SparseOperator,
    stiffness: &SparseOperator,
    u_plus: &[f64],
    u_fix_next: &[f64],
    u_fix_prev: &[f64],
    f: &[f64],
    dt: f64,
    testspace: &TestSpace,
    interval: usize,
) -> Result<ResidualVector> {
    let r = cg_fine_residual(mass, stiffness, u_plus, u_fix_next, u_fix_prev, f, dt);
    testspace.test(&r, interval)
}

pub fn residual_mixed(
    mv: &SparseOperator,
    bt: &SparseOperator,
    v_plus: &[f64],
    v_fix: &[f64],
    u_fix_cells: &[f64],
    testspace: &TestSpace,
    interval: usize,
) -> Result<ResidualVector> {
    let r = mixed_fine_residual(mv, bt, v_plus, v_fix, u_fix_cells);
    testspace.test(&r, interval)
}

pub fn residual_wave(
    mass: &SparseOperator,
    a_dg: &SparseOperator,
    u_next: &[f64],
    u_curr: &[f64],
    u_prev: &[f64],
    f: &[f64],
    dt: f64,
    testspace: &TestSpace,
    interval: usize,
) -> Result<ResidualVector> {
    let r = wave_fine_residual(mass, a_dg, u_next, u_curr, u_prev, f, dt);
    testspace.test(&r, interval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::CoefficientField;
    use crate::fem::cg::{assemble_cg, fine_solve_parabolic};
    use crate::linalg::TripletBuilder;
    use crate::mesh::build_hierarchy;
    use rand::{RngExt, SeedableRng};

    fn toy_test_space(n: usize, slices: &[usize]) -> TestSpace {
        // identity-like columns grouped into regions
        let mut columns = Vec::new();
        let mut offsets = vec![0];
        let mut regions = Vec::new();
        let mut next = 0;
        for (r, len) in slices.iter().enumerate() {
            for _ in 0..*len {
                columns.push(LocalVector::new(vec![next], vec![1.0]));
                next += 1;
            }
            regions.push(r);
            offsets.push(columns.len());
        }
        TestSpace {
            regions,
            columns,
            offsets,
            n_dofs: n,
        }
    }

    #[test]
    fn exact_fine_solution_has_zero_residual() {
        let h = build_hierarchy(6, 6, 2, 2, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(36, 1.0);
        let (m, a) = assemble_cg(&h, &field);
        let n = m.nrows();
        let f = vec![1.0; n];
        let dt = 0.05;
        let states = fine_solve_parabolic(&m, &a, &vec![0.0; n], &f, dt, 1).unwrap();
        let r = cg_fine_residual(
            &m,
            &a,
            &vec![0.0; n],
            &states[1].dofs,
            &states[0].dofs,
            &f,
            dt,
        );
        let rel = crate::linalg::norm2(&r) / crate::linalg::norm2(&m.matvec(&f));
        assert!(rel < 1e-10, "relative residual {rel}");
    }

    #[test]
    fn residual_is_affine_in_the_state() {
        let h = build_hierarchy(4, 4, 2, 2, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(16, 2.0);
        let (m, a) = assemble_cg(&h, &field);
        let n = m.nrows();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rand_vec = || -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() - 0.5).collect() };
        let (u_plus, delta, ufn, ufp, f) =
            (rand_vec(), rand_vec(), rand_vec(), rand_vec(), rand_vec());
        let dt = 0.1;
        let r0 = cg_fine_residual(&m, &a, &u_plus, &ufn, &ufp, &f, dt);
        let shifted: Vec<f64> = u_plus.iter().zip(&delta).map(|(u, d)| u + d).collect();
        let r1 = cg_fine_residual(&m, &a, &shifted, &ufn, &ufp, &f, dt);
        // r1 - r0 must equal -(M/dt + A) delta
        let md = m.matvec(&delta);
        let ad = a.matvec(&delta);
        for i in 0..n {
            let expect = -(md[i] / dt + ad[i]);
            assert!(((r1[i] - r0[i]) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_residual_matches_dense_oracle_small_mesh() {
        // 2x2-cell mesh: single interior node; hand test values
        let h = build_hierarchy(2, 2, 1, 1, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(4, 1.0);
        let (m, a) = assemble_cg(&h, &field);
        let dt = 0.2;
        let (up, ufn, ufp, f) = (vec![0.3], vec![-0.1], vec![0.7], vec![2.0]);
        let r = cg_fine_residual(&m, &a, &up, &ufn, &ufp, &f, dt);
        // dense quadrature oracle: M = 1/9, A = 8/3
        let expect = (1.0 / 9.0) * 2.0
            - (1.0 / 9.0) * (0.3 - 0.1 - 0.7) / dt
            - (8.0 / 3.0) * (0.3 - 0.1);
        assert!((r[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn region_norms_partition_the_global_norm() {
        let rv = ResidualVector {
            coords: vec![3.0, 0.0, 4.0, 0.0, 0.0],
            offsets: vec![0, 2, 5],
            interval: 0,
        };
        let norms = region_norms(&rv);
        assert!((norms.l2[0] - 3.0).abs() < 1e-15);
        assert!((norms.l2[1] - 4.0).abs() < 1e-15);
        assert!((norms.global - 5.0).abs() < 1e-15);
        let sum_sq: f64 = norms.l2.iter().map(|v| v * v).sum();
        assert!((sum_sq.sqrt() - norms.global).abs() < 1e-12);
        assert_eq!(norms.sup, vec![3.0, 4.0]);
    }

    #[test]
    fn disjoint_support_concentrates_the_norm() {
        let rv = ResidualVector {
            coords: vec![0.0, 0.0, 1.5, -2.0],
            offsets: vec![0, 2, 4],
            interval: 1,
        };
        let norms = region_norms(&rv);
        assert_eq!(norms.l2[0], 0.0);
        assert!((norms.global - norms.l2[1]).abs() < 1e-15);
    }

    #[test]
    fn mixed_residual_single_cell_hand_evaluation() {
        // one cell, kappa = 1: no interior edges remain, so work with the
        // full-edge operators directly
        let h = build_hierarchy(1, 1, 1, 1, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(1, 1.0);
        let ops = crate::fem::mixed::mixed_operators(&h, &field);
        let ne = h.n_fine_edges();
        let v_plus = vec![0.25; ne];
        let v_fix = vec![0.5; ne];
        let u = vec![2.0];
        let r = mixed_fine_residual(&ops.mv_full, &ops.bt_full, &v_plus, &v_fix, &u);
        // hand: Mv row for the left edge pairs it with the right edge only
        let [left, _right, _b, _t] = h.fine_cell_edges(0);
        let expect = 0.75 * (1.0 / 3.0 + 1.0 / 6.0) - (-1.0) * 2.0;
        assert!((r[left] - expect).abs() < 1e-14, "{} vs {expect}", r[left]);
    }

    #[test]
    fn mixed_zero_states_give_zero_residual() {
        let h = build_hierarchy(4, 4, 2, 2, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(16, 1.0);
        let ops = crate::fem::mixed::mixed_operators(&h, &field);
        let nv = ops.mv.nrows();
        let r = mixed_fine_residual(
            &ops.mv,
            &ops.bt,
            &vec![0.0; nv],
            &vec![0.0; nv],
            &vec![0.0; 16],
        );
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mixed_fine_solution_zeroes_the_residual() {
        let h = build_hierarchy(6, 6, 3, 3, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(36, 1.0);
        let ops = crate::fem::mixed::mixed_operators(&h, &field);
        let nv = ops.mv.nrows();
        let mut u0 = vec![0.0; 36];
        u0[10] = 1.0;
        let f = vec![0.5; 36];
        let states = crate::fem::mixed::fine_solve_mixed(&ops, &u0, &f, 0.1, 1).unwrap();
        let v = &states[1].dofs[..nv];
        let u = &states[1].dofs[nv..];
        let r = mixed_fine_residual(&ops.mv, &ops.bt, v, &vec![0.0; nv], u);
        let scale = crate::linalg::norm2(&ops.mv.matvec(v)).max(1e-30);
        assert!(crate::linalg::norm2(&r) / scale < 1e-10);
    }

    #[test]
    fn wave_fine_update_zeroes_the_residual() {
        let h = build_hierarchy(6, 6, 2, 2, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(36, 1.0);
        let a = crate::fem::ipdg::assemble_ipdg(&h, &field, 10.0);
        let m = crate::fem::ipdg::assemble_broken_mass(&h);
        let n = a.nrows();
        let mut u0 = vec![0.0; n];
        for (k, v) in u0.iter_mut().enumerate() {
            *v = ((k % 7) as f64 - 3.0) * 0.1;
        }
        let u1 = u0.clone();
        let f = vec![0.2; n];
        let dt = 1e-3;
        let states = crate::fem::ipdg::fine_solve_wave(&a, &h, &u0, &u1, &f, dt, 3).unwrap();
        let r = wave_fine_residual(
            &m,
            &a,
            &states[2].dofs,
            &states[1].dofs,
            &states[0].dofs,
            &f,
            dt,
        );
        let scale = crate::linalg::norm2(&m.matvec(&f)).max(1e-30);
        assert!(crate::linalg::norm2(&r) / scale < 1e-9);
    }

    #[test]
    fn wave_difference_identity_without_stiffness() {
        let h = build_hierarchy(2, 2, 1, 1, 1.0, 1.0).unwrap();
        let m = crate::fem::ipdg::assemble_broken_mass(&h);
        let n = m.nrows();
        let azero = TripletBuilder::new().build(n, n, true);
        let u_prev: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let u_curr: Vec<f64> = (0..n).map(|i| 2.0 * i as f64).collect();
        let u_next: Vec<f64> = (0..n).map(|i| 3.0 * i as f64).collect();
        let r = wave_fine_residual(&m, &azero, &u_next, &u_curr, &u_prev, &vec![0.0; n], 0.1);
        assert!(crate::linalg::norm2(&r) < 1e-12);
    }

    #[test]
    fn test_space_orthonormalizes_in_the_mass_inner_product() {
        let h = build_hierarchy(6, 6, 3, 3, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(36, 1.0);
        let (m, _) = assemble_cg(&h, &field);
        let n = m.nrows();
        let cols: Vec<LocalVector> = (0..3)
            .map(|k| {
                let idx: Vec<usize> = (0..n).collect();
                let val: Vec<f64> = (0..n).map(|i| ((i + k) as f64 * 0.37).sin() + 0.1).collect();
                LocalVector::new(idx, val)
            })
            .collect();
        let ts = TestSpace::build(vec![(0, cols)], &m);
        assert_eq!(ts.n_columns(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let a = ts.columns[i].to_dense(n);
                let b = ts.columns[j].to_dense(n);
                let q = m.form(&a, &b);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((q - expect).abs() < 1e-10, "({i},{j}): {q}");
            }
        }
    }

    #[test]
    fn projection_consistency_snapshot_correction() {
        // adding the exact snapshot-space correction drives the tested
        // residual to zero: solve the Galerkin system on the test span
        let h = build_hierarchy(6, 6, 2, 2, 1.0, 1.0).unwrap();
        let field = CoefficientField::uniform(36, 1.0);
        let (m, a) = assemble_cg(&h, &field);
        let n = m.nrows();
        let dt = 0.1;
        let f = vec![1.0; n];
        let cols: Vec<LocalVector> = (0..4)
            .map(|k| {
                let idx: Vec<usize> = (0..n).collect();
                let val: Vec<f64> = (0..n)
                    .map(|i| ((i * (k + 1)) as f64 * 0.29).cos())
                    .collect();
                LocalVector::new(idx, val)
            })
            .collect();
        let ts = TestSpace::build(vec![(0, cols)], &m);
        // solve C beta = Psi^T rhs with C = Psi^T (M/dt + A) Psi
        let k = ts.n_columns();
        let dense: Vec<Vec<f64>> = ts.columns.iter().map(|c| c.to_dense(n)).collect();
        let op = |v: &[f64]| -> Vec<f64> {
            let mv = m.matvec(v);
            let av = a.matvec(v);
            (0..n).map(|i| mv[i] / dt + av[i]).collect()
        };
        let rhs_fine = m.matvec(&f);
        let c = faer::Mat::from_fn(k, k, |i, j| crate::linalg::dot(&dense[i], &op(&dense[j])));
        let rhs: Vec<f64> = (0..k)
            .map(|i| crate::linalg::dot(&dense[i], &rhs_fine))
            .collect();
        let beta = crate::linalg::dense_solve(&c, &rhs).unwrap();
        let mut u_plus = vec![0.0; n];
        for (b, d) in beta.iter().zip(&dense) {
            crate::linalg::axpy(*b, d, &mut u_plus);
        }
        let zeros = vec![0.0; n];
        let r0 = residual_parabolic_cg(&m, &a, &zeros, &zeros, &zeros, &f, dt, &ts, 0).unwrap();
        let r1 = residual_parabolic_cg(&m, &a, &u_plus, &zeros, &zeros, &f, dt, &ts, 0).unwrap();
        assert!(r1.global_norm() / r0.global_norm() < 1e-10);
    }

    #[test]
    fn toy_slices_route_coordinates() {
        let ts = toy_test_space(5, &[2, 3]);
        let r = ts.test(&[1.0, 2.0, 3.0, 4.0, 5.0], 7).unwrap();
        assert_eq!(r.coords, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(r.region_slice(1), &[3.0, 4.0, 5.0]);
        assert_eq!(r.interval, 7);
    }
}
