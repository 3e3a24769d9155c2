//! Local spectral problem on the snapshot span: `A(phi, v) = lambda S(phi, v)`
//! with the energy form `A` and the weighted mass `S` restricted to the
//! oversampled region, returning ascending eigenpairs with S-orthonormal
//! vectors.

use faer::Mat;

use crate::linalg::{generalized_symmetric_eigen, LocalVector, SparseOperator};
use crate::{Error, Result};

use super::SnapshotSpace;

/// Eigenpairs over the snapshot span, mapped back to fine dofs.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Eigenvectors as dense local columns over `dofs`, S-orthonormal.
    pub vectors: Vec<Vec<f64>>,
    pub dofs: Vec<usize>,
}

/// Solves the generalized eigenproblem restricted to the snapshot span.
/// `a_loc` and `s_loc` are the region-local forms in the local numbering of
/// `snapshots.dofs`.
pub fn spectral_decompose(
    snapshots: &SnapshotSpace,
    a_loc: &SparseOperator,
    s_loc: &SparseOperator,
) -> Result<EigenPairs> {
    let n_dofs = snapshots.dofs.len();
    let m = snapshots.columns.len();
    if m == 0 {
        return Err(Error::config("snapshot space is empty".to_string()));
    }
    assert_eq!(a_loc.nrows(), n_dofs);
    assert_eq!(s_loc.nrows(), n_dofs);

    // dense local snapshot columns
    let cols: Vec<Vec<f64>> = snapshots
        .columns
        .iter()
        .map(|c| local_dense(c, &snapshots.dofs))
        .collect();

    let mut a_red = Mat::<f64>::zeros(m, m);
    let mut s_red = Mat::<f64>::zeros(m, m);
    for j in 0..m {
        let a_col = a_loc.matvec(&cols[j]);
        let s_col = s_loc.matvec(&cols[j]);
        for i in 0..=j {
            let va = crate::linalg::dot(&cols[i], &a_col);
            let vs = crate::linalg::dot(&cols[i], &s_col);
            a_red[(i, j)] = va;
            a_red[(j, i)] = va;
            s_red[(i, j)] = vs;
            s_red[(j, i)] = vs;
        }
    }

    let (values, vectors) = generalized_symmetric_eigen(&a_red, &s_red).map_err(|_| {
        Error::Numerics(
            "spectral problem: S is singular on the snapshot span (vanishing weight?)".into(),
        )
    })?;

    let mut mapped = Vec::with_capacity(m);
    for k in 0..m {
        let mut v = vec![0.0; n_dofs];
        for (j, col) in cols.iter().enumerate() {
            let w = vectors[(j, k)];
            if w != 0.0 {
                crate::linalg::axpy(w, col, &mut v);
            }
        }
        mapped.push(v);
    }

    Ok(EigenPairs {
        values,
        vectors: mapped,
        dofs: snapshots.dofs.clone(),
    })
}

pub(crate) fn local_dense(col: &LocalVector, dofs: &[usize]) -> Vec<f64> {
    let mut dense = vec![0.0; dofs.len()];
    for (i, v) in col.idx.iter().zip(&col.val) {
        if let Ok(k) = dofs.binary_search(i) {
            dense[k] = *v;
        }
    }
    dense
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::CoefficientField;
    use crate::fem::cg::{assemble_cg_full, assemble_region_forms};
    use crate::gmsfem::generate_snapshots;
    use crate::mesh::build_hierarchy;

    fn setup(
        count: usize,
    ) -> (
        crate::mesh::MeshHierarchy,
        SnapshotSpace,
        SparseOperator,
        SparseOperator,
    ) {
        let h = build_hierarchy(8, 8, 4, 4, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(64, 1.0);
        let (_, a_full) = assemble_cg_full(&h, &f);
        let omega = h.node_neighborhood(h.coarse_node_id(2, 2)).clone();
        let plus = h.oversample(&omega, 1);
        let snap = generate_snapshots(&h, &a_full, &plus, count, 5).unwrap();
        let cells = h.region_cells(&plus);
        let weights = vec![1.0; h.n_fine_cells()];
        let (a_loc, s_loc) =
            assemble_region_forms(&h, &cells, &snap.dofs, f.values(), &weights);
        (h, snap, a_loc, s_loc)
    }

    #[test]
    fn single_snapshot_gives_rayleigh_quotient() {
        let (_, snap, a_loc, s_loc) = setup(1);
        let pairs = spectral_decompose(&snap, &a_loc, &s_loc).unwrap();
        let col = local_dense(&snap.columns[0], &snap.dofs);
        let expect = a_loc.form(&col, &col) / s_loc.form(&col, &col);
        assert!((pairs.values[0] - expect).abs() < 1e-10 * expect.max(1.0));
    }

    #[test]
    fn eigenpairs_match_dense_oracle_and_ascend() {
        let (_, snap, a_loc, s_loc) = setup(10);
        let pairs = spectral_decompose(&snap, &a_loc, &s_loc).unwrap();
        // independent dense oracle on the 10x10 reduced matrices
        let m = snap.columns.len();
        let cols: Vec<Vec<f64>> = snap
            .columns
            .iter()
            .map(|c| local_dense(c, &snap.dofs))
            .collect();
        let a_red = faer::Mat::from_fn(m, m, |i, j| a_loc.form(&cols[i], &cols[j]));
        let s_red = faer::Mat::from_fn(m, m, |i, j| s_loc.form(&cols[i], &cols[j]));
        // oracle: solve S^{-1/2} A S^{-1/2} by explicit inverse square root
        let evd_s = s_red.self_adjoint_eigen(faer::Side::Lower).unwrap();
        let mut s_inv_half = faer::Mat::<f64>::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                let mut v = 0.0;
                for k in 0..m {
                    v += evd_s.U()[(a, k)] * evd_s.U()[(b, k)] / evd_s.S()[k].sqrt();
                }
                s_inv_half[(a, b)] = v;
            }
        }
        let c = &s_inv_half * &(&a_red * &s_inv_half);
        let eigs = c.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        for (k, lam) in pairs.values.iter().enumerate() {
            assert!(
                (lam - eigs[k]).abs() < 1e-8 * eigs[k].abs().max(1.0),
                "pair {k}: {lam} vs oracle {}",
                eigs[k]
            );
        }
        for w in pairs.values.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
        assert!(pairs.values[0] >= -1e-10);
        // S-orthonormality of mapped vectors
        for i in 0..m {
            for j in 0..m {
                let q = s_loc.form(&pairs.vectors[i], &pairs.vectors[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((q - expect).abs() < 1e-8, "S-orth ({i},{j}): {q}");
            }
        }
    }

    #[test]
    fn constant_in_span_yields_zero_eigenvalue() {
        // constant function on a region away from the domain boundary is in
        // the kernel of the region stiffness
        let h = build_hierarchy(24, 24, 6, 6, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(576, 1.0);
        let omega = h.node_neighborhood(h.coarse_node_id(3, 3)).clone();
        let plus = h.oversample(&omega, 1);
        let (interior, boundary) = h.region_nodes_split(&plus);
        let mut dofs: Vec<usize> = interior
            .iter()
            .chain(boundary.iter().filter(|n| !h.fine_node_on_boundary(**n)))
            .copied()
            .collect();
        dofs.sort_unstable();
        let ones = LocalVector::new(dofs.clone(), vec![1.0; dofs.len()]);
        let snap = SnapshotSpace {
            region: 0,
            dofs: dofs.clone(),
            columns: vec![ones],
        };
        let cells = h.region_cells(&plus);
        let weights = vec![1.0; h.n_fine_cells()];
        let (a_loc, s_loc) = assemble_region_forms(&h, &cells, &dofs, f.values(), &weights);
        let pairs = spectral_decompose(&snap, &a_loc, &s_loc).unwrap();
        assert!(pairs.values[0].abs() < 1e-10);
    }
}
