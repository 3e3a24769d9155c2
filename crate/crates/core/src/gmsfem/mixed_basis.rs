//! Edge-based velocity basis for the mixed formulation: per coarse edge,
//! snapshot fields with unit normal flux through one fine edge of the coarse
//! edge (zero through the rest, no flux through the outer neighborhood
//! boundary, blockwise-constant divergence) and a spectral split ranking
//! them by the edge form `int_E kappa^{-1} (v.n)(w.n)` against the
//! neighborhood mass `int_{omega_E} kappa^{-1} v.w`.

use faer::Mat;

use crate::coeff::CoefficientField;
use crate::fem::mixed::mixed_operators;
use crate::linalg::{generalized_symmetric_eigen, LocalVector, TripletBuilder};
use crate::mesh::MeshHierarchy;
use crate::{Error, Result};

use super::RegionBasisSet;

/// Builds the per-edge basis set. Boundary coarse edges carry no flux dofs
/// under the no-flux outer condition and yield an empty set.
pub fn build_mixed_edge_basis(
    hierarchy: &MeshHierarchy,
    field: &CoefficientField,
    edge: usize,
    n_perm: usize,
    n_candidates: usize,
) -> Result<RegionBasisSet> {
    if hierarchy.coarse_edge_on_boundary(edge) {
        return Ok(RegionBasisSet {
            region: edge,
            eigenvalues: Vec::new(),
            permanent: Vec::new(),
            candidates: Vec::new(),
            snapshots: Vec::new(),
        });
    }
    let fine_edges = hierarchy.coarse_edge_fine_edges(edge);
    let n_snap = fine_edges.len();
    if n_perm > n_snap {
        return Err(Error::config(format!(
            "coarse edge {edge}: {n_perm} permanent basis functions requested \
             but only {n_snap} fine edges available"
        )));
    }
    let n_cand = n_candidates.min(n_snap - n_perm);
    if n_cand < n_candidates {
        eprintln!(
            "warning: coarse edge {edge}: clamping candidates to {n_cand} \
             (snapshot space dimension {n_snap})"
        );
    }

    let ops = mixed_operators(hierarchy, field);
    let omega = hierarchy.edge_neighborhood(edge);
    let region_edges = hierarchy.region_interior_edges(omega);

    // one snapshot per fine edge of E
    let mut snapshots = Vec::with_capacity(n_snap);
    for e in &fine_edges {
        snapshots.push(edge_snapshot(hierarchy, &ops, edge, *e)?);
    }

    // spectral forms on the snapshot span
    let kinv_face: Vec<f64> = fine_edges
        .iter()
        .map(|e| {
            let (ca, cb) = hierarchy.fine_edge_cells(*e);
            let ka = field.values()[ca.expect("interior coarse edge")];
            let kb = field.values()[cb.expect("interior coarse edge")];
            (ka + kb) / (2.0 * ka * kb) // 1 / harmonic mean
        })
        .collect();
    let mut a_red = Mat::<f64>::zeros(n_snap, n_snap);
    for (i, e) in fine_edges.iter().enumerate() {
        a_red[(i, i)] = kinv_face[i] * hierarchy.fine_edge_len(*e);
    }
    let mv_region = ops.mv_full.submatrix_symmetric(&region_edges);
    let cols: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|c| super::spectral::local_dense(c, &region_edges))
        .collect();
    let mut s_red = Mat::<f64>::zeros(n_snap, n_snap);
    for i in 0..n_snap {
        let mv_col = mv_region.matvec(&cols[i]);
        for j in 0..=i {
            let v = crate::linalg::dot(&cols[j], &mv_col);
            s_red[(i, j)] = v;
            s_red[(j, i)] = v;
        }
    }

    let (values, vectors) = generalized_symmetric_eigen(&a_red, &s_red)
        .map_err(|_| Error::Numerics(format!("edge {edge}: singular snapshot mass")))?;

    let mut columns = Vec::with_capacity(n_perm + n_cand);
    for k in 0..n_perm + n_cand {
        let mut dense = vec![0.0; region_edges.len()];
        for (j, col) in cols.iter().enumerate() {
            crate::linalg::axpy(vectors[(j, k)], col, &mut dense);
        }
        let (idx, val): (Vec<usize>, Vec<f64>) = region_edges
            .iter()
            .zip(&dense)
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (*i, *v))
            .unzip();
        columns.push(LocalVector::new(idx, val));
    }
    let candidates = columns.split_off(n_perm);

    Ok(RegionBasisSet {
        region: edge,
        eigenvalues: values[..n_perm + n_cand].to_vec(),
        permanent: columns,
        candidates,
        snapshots,
    })
}

/// Solves the two block-local mixed Neumann problems for the snapshot with
/// unit normal flux through `fine_edge` of coarse `edge`.
fn edge_snapshot(
    hierarchy: &MeshHierarchy,
    ops: &crate::fem::mixed::MixedOperators,
    edge: usize,
    fine_edge: usize,
) -> Result<LocalVector> {
    let omega = hierarchy.edge_neighborhood(edge);
    let blocks = omega.blocks();
    debug_assert_eq!(blocks.len(), 2);
    let mut pairs: Vec<(usize, f64)> = vec![(fine_edge, 1.0)];

    for (bk, block) in blocks.iter().enumerate() {
        // the global edge normal (+x / +y) points out of the first block
        let sign = if bk == 0 { 1.0 } else { -1.0 };
        let region = crate::mesh::Region::new(vec![*block]);
        let cells = hierarchy.region_cells(&region);
        let interior_edges = hierarchy.region_interior_edges(&region);
        // boundary edges of the block: all cell edges not interior
        let mut boundary_edges: Vec<usize> = cells
            .iter()
            .flat_map(|c| hierarchy.fine_cell_edges(*c))
            .filter(|e| interior_edges.binary_search(e).is_err())
            .collect();
        boundary_edges.sort_unstable();
        boundary_edges.dedup();

        // prescribed data: unit flux through `fine_edge`, zero elsewhere
        let g: Vec<f64> = boundary_edges
            .iter()
            .map(|e| if *e == fine_edge { 1.0 } else { 0.0 })
            .collect();

        let e_len = hierarchy.fine_edge_len(fine_edge);
        let block_area = cells.len() as f64 * hierarchy.hx * hierarchy.hy;
        let c_k = sign * e_len / block_area;

        let ni = interior_edges.len();
        let nc = cells.len();
        let mv_ii = ops.mv_full.submatrix(&interior_edges, &interior_edges);
        let mv_ib = ops.mv_full.submatrix(&interior_edges, &boundary_edges);
        let b_i = ops.b_full.submatrix(&cells, &interior_edges);
        let b_b = ops.b_full.submatrix(&cells, &boundary_edges);

        // assemble [[Mv_II, -B_I^T], [B_I (all but last row), 0], [pin p_last]]
        let mut tb = TripletBuilder::new();
        for j in 0..ni {
            let rows = mv_ii.inner().row_idx_of_col_raw(j);
            let vals = mv_ii.inner().val_of_col(j);
            for (r, v) in rows.iter().zip(vals) {
                tb.add(*r, j, *v);
            }
        }
        for j in 0..ni {
            let rows = b_i.inner().row_idx_of_col_raw(j);
            let vals = b_i.inner().val_of_col(j);
            for (r, v) in rows.iter().zip(vals) {
                tb.add(j, ni + r, -v);
                if *r + 1 < nc {
                    tb.add(ni + r, j, *v);
                }
            }
        }
        tb.add(ni + nc - 1, ni + nc - 1, 1.0);
        let sys = tb.build(ni + nc, ni + nc, false);

        let mut rhs = vec![0.0; ni + nc];
        let mv_g = mv_ib.matvec(&g);
        for (r, v) in rhs[..ni].iter_mut().zip(&mv_g) {
            *r = -v;
        }
        let b_g = b_b.matvec(&g);
        for c in 0..nc - 1 {
            rhs[ni + c] = c_k * hierarchy.hx * hierarchy.hy - b_g[c];
        }
        let sol = sys.factorize()?.solve(&rhs);
        for (k, e) in interior_edges.iter().enumerate() {
            pairs.push((*e, sol[k]));
        }
    }

    pairs.sort_unstable_by_key(|(e, _)| *e);
    pairs.dedup_by_key(|(e, _)| *e);
    let (idx, val) = pairs.into_iter().unzip();
    Ok(LocalVector::new(idx, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;

    #[test]
    fn boundary_coarse_edge_yields_empty_set() {
        let h = build_hierarchy(4, 4, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(16, 1.0);
        let boundary_edge = (0..h.n_coarse_edges())
            .find(|e| h.coarse_edge_on_boundary(*e))
            .unwrap();
        let set = build_mixed_edge_basis(&h, &f, boundary_edge, 1, 1).unwrap();
        assert!(set.permanent.is_empty());
    }

    #[test]
    fn snapshot_satisfies_divergence_constraint() {
        let h = build_hierarchy(8, 8, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(64, 3.0);
        let ops = mixed_operators(&h, &f);
        let edge = (0..h.n_coarse_edges())
            .find(|e| !h.coarse_edge_on_boundary(*e))
            .unwrap();
        let fine_edges = h.coarse_edge_fine_edges(edge);
        let snap = edge_snapshot(&h, &ops, edge, fine_edges[1]).unwrap();
        // blockwise: div v = +-|e| / |K| in each cell of each block
        let dense = snap.to_dense(h.n_fine_edges());
        let div = ops.b_full.matvec(&dense);
        let omega = h.edge_neighborhood(edge);
        let e_len = h.fine_edge_len(fine_edges[1]);
        for (bk, block) in omega.blocks().iter().enumerate() {
            let sign = if bk == 0 { 1.0 } else { -1.0 };
            let area = h.block_cells(*block).len() as f64 * h.hx * h.hy;
            for c in h.block_cells(*block) {
                let expect = sign * e_len / area * (h.hx * h.hy);
                assert!(
                    (div[*c] - expect).abs() < 1e-9,
                    "cell {c}: div {} vs {expect}",
                    div[*c]
                );
            }
        }
        // unit flux on the chosen fine edge, zero on the others of E
        for (k, e) in fine_edges.iter().enumerate() {
            let expect = if k == 1 { 1.0 } else { 0.0 };
            assert!((dense[*e] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalues_match_dense_oracle_on_small_mesh() {
        let h = build_hierarchy(4, 4, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(16, 1.0);
        let edge = (0..h.n_coarse_edges())
            .find(|e| !h.coarse_edge_on_boundary(*e))
            .unwrap();
        let set = build_mixed_edge_basis(&h, &f, edge, 1, 1).unwrap();
        assert_eq!(set.snapshots.len(), 2);

        // oracle: build the reduced 2x2 matrices from dense integrals
        let ops = mixed_operators(&h, &f);
        let omega = h.edge_neighborhood(edge);
        let region_edges = h.region_interior_edges(omega);
        let fine_edges = h.coarse_edge_fine_edges(edge);
        let n = set.snapshots.len();
        let mut a_red = faer::Mat::<f64>::zeros(n, n);
        for (i, e) in fine_edges.iter().enumerate() {
            a_red[(i, i)] = h.fine_edge_len(*e); // kappa = 1
        }
        let mv = ops.mv_full.submatrix_symmetric(&region_edges);
        let dense: Vec<Vec<f64>> = set
            .snapshots
            .iter()
            .map(|c| super::super::spectral::local_dense(c, &region_edges))
            .collect();
        let s_red = faer::Mat::from_fn(n, n, |i, j| mv.form(&dense[i], &dense[j]));
        let (oracle, _) = generalized_symmetric_eigen(&a_red, &s_red).unwrap();
        for (k, lam) in set.eigenvalues.iter().enumerate() {
            assert!(
                (lam - oracle[k]).abs() < 1e-8 * oracle[k].abs().max(1.0),
                "{lam} vs {}",
                oracle[k]
            );
        }
    }

    #[test]
    fn single_fine_edge_span_is_one_dimensional() {
        // fine grid equals coarse grid: one fine edge per coarse edge
        let h = build_hierarchy(2, 2, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(4, 1.0);
        let edge = (0..h.n_coarse_edges())
            .find(|e| !h.coarse_edge_on_boundary(*e))
            .unwrap();
        let set = build_mixed_edge_basis(&h, &f, edge, 1, 0).unwrap();
        assert_eq!(set.snapshots.len(), 1);
        assert_eq!(set.permanent.len(), 1);
        // basis is the normalized snapshot: same direction
        let snap = &set.snapshots[0];
        let basis = &set.permanent[0];
        assert_eq!(snap.idx, basis.idx);
        let ratio = basis.val[0] / snap.val[0];
        for (a, b) in basis.val.iter().zip(&snap.val) {
            assert!((a - ratio * b).abs() < 1e-10);
        }
    }
}
