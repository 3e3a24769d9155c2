//! Multiscale partition of unity: per coarse node, the local solution of
//! `-div(kappa grad chi) = 0` in each block of its neighborhood with the
//! coarse bilinear hat traced on block boundaries.

use crate::coeff::CoefficientField;
use crate::linalg::LocalVector;
use crate::mesh::MeshHierarchy;
use crate::{Error, Result};

/// Per coarse node: the partition-of-unity column over fine nodes,
/// supported on the node's neighborhood.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    pub chi: Vec<LocalVector>,
}

impl PartitionOfUnity {
    /// Per-cell weight `kappa * sum_i |grad chi_i|^2` (cell averages), used
    /// by the spectral problem's weighted mass form.
    pub fn weight_cells(&self, hierarchy: &MeshHierarchy, field: &CoefficientField) -> Vec<f64> {
        let ke = crate::fem::q1_stiffness_local(hierarchy.hx, hierarchy.hy);
        let area = hierarchy.hx * hierarchy.hy;
        let mut chi_dense = vec![0.0; hierarchy.n_fine_nodes()];
        let mut weights = vec![0.0; hierarchy.n_fine_cells()];
        for chi in &self.chi {
            for v in chi_dense.iter_mut() {
                *v = 0.0;
            }
            chi.scatter_add(1.0, &mut chi_dense);
            // touch only cells in the support
            let mut cells = std::collections::BTreeSet::new();
            for node in &chi.idx {
                let i = node % (hierarchy.nx_fine + 1);
                let j = node / (hierarchy.nx_fine + 1);
                for (ci, cj) in [
                    (i.wrapping_sub(1), j.wrapping_sub(1)),
                    (i, j.wrapping_sub(1)),
                    (i.wrapping_sub(1), j),
                    (i, j),
                ] {
                    if ci < hierarchy.nx_fine && cj < hierarchy.ny_fine {
                        cells.insert(hierarchy.fine_cell_id(ci, cj));
                    }
                }
            }
            for cell in cells {
                let nodes = hierarchy.fine_cell_nodes(cell);
                let mut q = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        q += chi_dense[nodes[a]] * ke[a][b] * chi_dense[nodes[b]];
                    }
                }
                weights[cell] += q / area;
            }
        }
        for (cell, w) in weights.iter_mut().enumerate() {
            *w *= field.values()[cell];
        }
        weights
    }
}

/// Coarse bilinear hat of coarse node `(ci, cj)` evaluated at a fine node.
fn hat_value(hierarchy: &MeshHierarchy, ci: usize, cj: usize, node: usize) -> f64 {
    let (x, y) = hierarchy.fine_node_coords(node);
    let hx_c = hierarchy.lx / hierarchy.nx_coarse as f64;
    let hy_c = hierarchy.ly / hierarchy.ny_coarse as f64;
    let xc = ci as f64 * hx_c;
    let yc = cj as f64 * hy_c;
    let vx = (1.0 - ((x - xc) / hx_c).abs()).max(0.0);
    let vy = (1.0 - ((y - yc) / hy_c).abs()).max(0.0);
    vx * vy
}

/// Computes the partition of unity for all coarse nodes by solving, in each
/// coarse block, the local fine problem with the bilinear hat boundary data.
pub fn compute_pou(
    hierarchy: &MeshHierarchy,
    field: &CoefficientField,
) -> Result<PartitionOfUnity> {
    let (_, a_full) = crate::fem::cg::assemble_cg_full(hierarchy, field);
    compute_pou_with(hierarchy, &a_full)
}

pub(crate) fn compute_pou_with(
    hierarchy: &MeshHierarchy,
    a_full: &crate::linalg::SparseOperator,
) -> Result<PartitionOfUnity> {
    // (fine node, value) pairs per coarse node; block-boundary nodes are
    // produced by several blocks with identical trace values
    let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); hierarchy.n_coarse_nodes()];

    for block in 0..hierarchy.n_coarse_blocks() {
        let (bi, bj) = hierarchy.coarse_block_ij(block);
        let region = crate::mesh::Region::new(vec![block]);
        let (interior, boundary) = hierarchy.region_nodes_split(&region);
        let a_ii = a_full.submatrix_symmetric(&interior);
        let a_ib = a_full.submatrix(&interior, &boundary);
        let fact = a_ii.factorize().map_err(|e| {
            Error::solver(format!("partition-of-unity block {block} is singular: {e}"))
        })?;

        // the block's four corner coarse nodes
        for (ci, cj) in [(bi, bj), (bi + 1, bj), (bi + 1, bj + 1), (bi, bj + 1)] {
            let cnode = hierarchy.coarse_node_id(ci, cj);
            let g: Vec<f64> = boundary
                .iter()
                .map(|n| hat_value(hierarchy, ci, cj, *n))
                .collect();
            let rhs: Vec<f64> = a_ib.matvec(&g).iter().map(|v| -v).collect();
            let sol = fact.solve(&rhs);
            let acc = &mut pairs[cnode];
            for (n, v) in boundary.iter().zip(&g) {
                acc.push((*n, *v));
            }
            for (n, v) in interior.iter().zip(&sol) {
                acc.push((*n, *v));
            }
        }
    }

    let chi = pairs
        .into_iter()
        .map(|mut acc| {
            acc.sort_unstable_by_key(|(n, _)| *n);
            acc.dedup_by_key(|(n, _)| *n);
            let (idx, val) = acc.into_iter().unzip();
            LocalVector::new(idx, val)
        })
        .collect();
    Ok(PartitionOfUnity { chi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;

    #[test]
    fn uniform_coefficient_reproduces_bilinear_hats() {
        let h = build_hierarchy(8, 8, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(64, 1.0);
        let pou = compute_pou(&h, &f).unwrap();
        for cnode in 0..h.n_coarse_nodes() {
            let (ci, cj) = h.coarse_node_ij(cnode);
            for (n, v) in pou.chi[cnode].idx.iter().zip(&pou.chi[cnode].val) {
                let expect = hat_value(&h, ci, cj, *n);
                assert!(
                    (v - expect).abs() < 1e-11,
                    "node {n}: {v} vs hat {expect}"
                );
            }
        }
    }

    #[test]
    fn partition_sums_to_one_for_heterogeneous_field() {
        use crate::coeff::{generate_field, FieldGenSpec};
        let h = build_hierarchy(12, 12, 3, 3, 1.0, 1.0).unwrap();
        let f = generate_field(
            &FieldGenSpec {
                background: 1.0,
                contrast: 100.0,
                seed: 4,
                num_channels: 3,
            },
            &h,
        );
        let pou = compute_pou(&h, &f).unwrap();
        let mut sum = vec![0.0; h.n_fine_nodes()];
        for chi in &pou.chi {
            chi.scatter_add(1.0, &mut sum);
            for v in &chi.val {
                assert!(*v >= -1e-10 && *v <= 1.0 + 1e-10, "chi out of range: {v}");
            }
        }
        for node in 0..h.n_fine_nodes() {
            assert!((sum[node] - 1.0).abs() < 1e-10, "sum at {node}: {}", sum[node]);
        }
    }

    #[test]
    fn chi_is_kronecker_at_coarse_nodes() {
        let h = build_hierarchy(8, 8, 2, 2, 1.0, 1.0).unwrap();
        let mut vals = vec![1.0; 64];
        for (k, v) in vals.iter_mut().enumerate() {
            if k % 3 == 0 {
                *v = 100.0;
            }
        }
        let f = CoefficientField::new(vals, crate::coeff::TimeLaw::Constant).unwrap();
        let pou = compute_pou(&h, &f).unwrap();
        for i in 0..h.n_coarse_nodes() {
            for j in 0..h.n_coarse_nodes() {
                let fine = h.coarse_node_fine_node(j);
                let v = pou.chi[i]
                    .idx
                    .binary_search(&fine)
                    .map(|p| pou.chi[i].val[p])
                    .unwrap_or(0.0);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn weight_cells_positive_on_support() {
        let h = build_hierarchy(8, 8, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(64, 2.0);
        let pou = compute_pou(&h, &f).unwrap();
        let w = pou.weight_cells(&h, &f);
        // hats overlap everywhere, so the weight is positive in every cell
        for v in &w {
            assert!(*v > 0.0);
        }
    }
}
