//! Per-region multiscale basis construction: partition of unity, randomized
//! snapshot spaces, local spectral problems, and the split of the resulting
//! offline functions into permanent and candidate basis columns.
//!
//! Nodal constructions (continuous Galerkin and wave) work in full fine-node
//! indexing; values at domain-boundary nodes are structurally zero so every
//! column conforms to the homogeneous Dirichlet condition. Mixed edge
//! constructions work in fine-edge indexing with no-flux outer boundaries.

mod mixed_basis;
mod pou;
mod snapshots;
mod spectral;

pub use mixed_basis::build_mixed_edge_basis;
pub use pou::{compute_pou, PartitionOfUnity};
pub use snapshots::{generate_snapshots, harmonic_extension, SnapshotSpace};
pub use spectral::{spectral_decompose, EigenPairs};

use crate::coeff::CoefficientField;
use crate::linalg::LocalVector;
use crate::mesh::MeshHierarchy;
use crate::{derive_seed, Result};

/// Per-region basis data: ascending eigenvalues, permanent columns,
/// candidate columns, and the snapshot (test) columns they came from.
///
/// Columns are `LocalVector`s over fine nodes (nodal formulations) or fine
/// edges (mixed formulation).
#[derive(Clone, Debug)]
pub struct RegionBasisSet {
    /// Coarse node id (nodal formulations) or coarse edge id (mixed).
    pub region: usize,
    pub eigenvalues: Vec<f64>,
    pub permanent: Vec<LocalVector>,
    pub candidates: Vec<LocalVector>,
    pub snapshots: Vec<LocalVector>,
}

impl RegionBasisSet {
    pub fn n_columns(&self) -> usize {
        self.permanent.len() + self.candidates.len()
    }
}

/// Multiplies eigencolumns by the partition-of-unity function of the region
/// and splits them into permanent and candidate sets, renormalized to unit
/// S-norm (the spectral problem's weighted mass).
///
/// `chi` is the region's partition-of-unity column; the product restricts
/// support to the region automatically.
pub fn build_region_basis(
    eigenpairs: &EigenPairs,
    chi: &LocalVector,
    n_perm: usize,
    n_candidates: usize,
    s_norm: impl Fn(&LocalVector) -> f64,
) -> Result<RegionBasisSet> {
    assert!(n_perm >= 1, "need at least one permanent basis function");
    assert!(
        n_perm + n_candidates <= eigenpairs.vectors.len(),
        "requested {} columns from {} eigenpairs",
        n_perm + n_candidates,
        eigenpairs.vectors.len()
    );
    let n = eigenpairs.dofs.len();
    // map chi onto the eigenvector dof list
    let mut chi_on_dofs = vec![0.0; n];
    for (k, d) in eigenpairs.dofs.iter().enumerate() {
        if let Ok(p) = chi.idx.binary_search(d) {
            chi_on_dofs[k] = chi.val[p];
        }
    }

    let mut columns = Vec::with_capacity(n_perm + n_candidates);
    for vec in eigenpairs.vectors.iter().take(n_perm + n_candidates) {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for k in 0..n {
            let v = vec[k] * chi_on_dofs[k];
            if v != 0.0 {
                idx.push(eigenpairs.dofs[k]);
                val.push(v);
            }
        }
        let mut col = LocalVector::new(idx, val);
        let nrm = s_norm(&col);
        if nrm > 0.0 {
            col.scale(1.0 / nrm);
        }
        columns.push(col);
    }
    let candidates = columns.split_off(n_perm);
    Ok(RegionBasisSet {
        region: 0,
        eigenvalues: eigenpairs.values[..n_perm + n_candidates].to_vec(),
        permanent: columns,
        candidates,
        snapshots: Vec::new(),
    })
}

/// Knobs for catalog construction.
#[derive(Clone, Copy, Debug)]
pub struct BasisParams {
    pub n_perm: usize,
    pub n_candidates: usize,
    /// Extra snapshot (buffer) columns beyond permanent + candidates.
    pub buffer: usize,
    pub oversample_layers: usize,
    pub seed: u64,
    /// When true, candidate columns are replaced by the raw snapshot columns
    /// (validation mode: the trial space then spans the test space).
    pub candidates_from_snapshots: bool,
}

impl Default for BasisParams {
    fn default() -> Self {
        BasisParams {
            n_perm: 2,
            n_candidates: 4,
            buffer: 4,
            oversample_layers: 1,
            seed: 0,
            candidates_from_snapshots: false,
        }
    }
}

/// The full set of per-region bases for one formulation at one coefficient
/// snapshot.
#[derive(Clone, Debug)]
pub struct BasisCatalog {
    /// One entry per region, ordered by region id.
    pub regions: Vec<RegionBasisSet>,
    /// Partition of unity used for the nodal constructions (empty for mixed).
    pub pou: Option<PartitionOfUnity>,
    /// When set, columns are already in solver dof indexing (used by the
    /// full-fine-space identity basis) and skip the usual conversion.
    pub solver_indexed: bool,
}

impl BasisCatalog {
    pub fn n_permanent(&self) -> usize {
        self.regions.iter().map(|r| r.permanent.len()).sum()
    }

    pub fn n_candidates(&self) -> usize {
        self.regions.iter().map(|r| r.candidates.len()).sum()
    }
}

/// Builds the nodal (CG / wave) catalog: one region per coarse node.
pub fn build_nodal_catalog(
    hierarchy: &MeshHierarchy,
    field: &CoefficientField,
    params: &BasisParams,
) -> Result<BasisCatalog> {
    let pou = compute_pou(hierarchy, field)?;
    let weight_cells = pou.weight_cells(hierarchy, field);
    let (_, a_full) = crate::fem::cg::assemble_cg_full(hierarchy, field);

    let mut regions = Vec::with_capacity(hierarchy.n_coarse_nodes());
    for cnode in 0..hierarchy.n_coarse_nodes() {
        let omega = hierarchy.node_neighborhood(cnode).clone();
        let omega_plus = hierarchy.oversample(&omega, params.oversample_layers);
        let requested = params.n_perm + params.n_candidates + params.buffer;
        let seed = derive_seed(params.seed, "snapshots", cnode as u64);
        let snap = generate_snapshots(hierarchy, &a_full, &omega_plus, requested, seed)?;

        let cells = hierarchy.region_cells(&omega_plus);
        let (a_loc, s_loc) = crate::fem::cg::assemble_region_forms(
            hierarchy,
            &cells,
            &snap.dofs,
            field.values(),
            &weight_cells,
        );
        let pairs = spectral_decompose(&snap, &a_loc, &s_loc)?;
        let avail = pairs.vectors.len();
        let n_cand = params.n_candidates.min(avail.saturating_sub(params.n_perm));
        if n_cand < params.n_candidates {
            eprintln!(
                "warning: region {cnode}: only {avail} eigenpairs available, \
                 clamping candidates to {n_cand}"
            );
        }
        let s_norm = |col: &LocalVector| -> f64 {
            // columns live on a subset of snap.dofs
            let mut dense = vec![0.0; snap.dofs.len()];
            for (i, v) in col.idx.iter().zip(&col.val) {
                if let Ok(k) = snap.dofs.binary_search(i) {
                    dense[k] = *v;
                }
            }
            s_loc.form(&dense, &dense).sqrt()
        };
        let mut set = build_region_basis(&pairs, &pou.chi[cnode], params.n_perm, n_cand, s_norm)?;
        set.region = cnode;
        set.snapshots = snap.columns.clone();
        if params.candidates_from_snapshots {
            set.candidates = snap.columns.clone();
        }
        regions.push(set);
    }
    Ok(BasisCatalog {
        regions,
        pou: Some(pou),
        solver_indexed: false,
    })
}

/// Builds the mixed catalog: one region per interior coarse edge
/// (boundary coarse edges carry no flux dofs under the no-flux condition).
pub fn build_mixed_catalog(
    hierarchy: &MeshHierarchy,
    field: &CoefficientField,
    params: &BasisParams,
) -> Result<BasisCatalog> {
    let mut regions = Vec::new();
    for edge in 0..hierarchy.n_coarse_edges() {
        if hierarchy.coarse_edge_on_boundary(edge) {
            continue;
        }
        let mut set = build_mixed_edge_basis(
            hierarchy,
            field,
            edge,
            params.n_perm,
            params.n_candidates,
        )?;
        if params.candidates_from_snapshots {
            set.candidates = set.snapshots.clone();
        }
        regions.push(set);
    }
    Ok(BasisCatalog {
        regions,
        pou: None,
        solver_indexed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;

    #[test]
    fn nodal_catalog_covers_all_coarse_nodes() {
        let h = build_hierarchy(16, 16, 4, 4, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(256, 1.0);
        let params = BasisParams {
            n_perm: 1,
            n_candidates: 2,
            buffer: 2,
            ..Default::default()
        };
        let cat = build_nodal_catalog(&h, &f, &params).unwrap();
        assert_eq!(cat.regions.len(), h.n_coarse_nodes());
        for set in &cat.regions {
            assert_eq!(set.permanent.len(), 1);
            assert_eq!(set.candidates.len(), 2);
            for w in set.eigenvalues.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
            assert!(set.eigenvalues[0] >= -1e-10);
        }
    }

    #[test]
    fn identical_seeds_give_identical_catalogs() {
        let h = build_hierarchy(8, 8, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(64, 1.0);
        let params = BasisParams {
            n_perm: 1,
            n_candidates: 1,
            buffer: 1,
            seed: 42,
            ..Default::default()
        };
        let a = build_nodal_catalog(&h, &f, &params).unwrap();
        let b = build_nodal_catalog(&h, &f, &params).unwrap();
        for (ra, rb) in a.regions.iter().zip(&b.regions) {
            for (ca, cb) in ra.permanent.iter().zip(&rb.permanent) {
                assert_eq!(ca.idx, cb.idx);
                assert_eq!(ca.val, cb.val);
            }
        }
    }

    #[test]
    fn basis_columns_are_supported_inside_omega() {
        let h = build_hierarchy(12, 12, 3, 3, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(144, 1.0);
        let params = BasisParams {
            n_perm: 1,
            n_candidates: 1,
            buffer: 1,
            ..Default::default()
        };
        let cat = build_nodal_catalog(&h, &f, &params).unwrap();
        for set in &cat.regions {
            let omega = h.node_neighborhood(set.region);
            let nodes = h.region_nodes(omega);
            for col in set.permanent.iter().chain(&set.candidates) {
                for i in &col.idx {
                    assert!(nodes.binary_search(i).is_ok(), "dof {i} outside omega");
                }
            }
        }
    }
}
