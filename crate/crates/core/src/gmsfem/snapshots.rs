//! Randomized snapshot spaces: local solutions of the coefficient equation
//! on an oversampled region with i.i.d. standard Gaussian boundary values.
//! Values on the domain boundary stay zero (the global Dirichlet condition),
//! so snapshots conform to the eliminated fine space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{LocalVector, SparseOperator};
use crate::mesh::{MeshHierarchy, Region};
use crate::{Error, Result};

/// Snapshot columns of one region, stored over the region's admissible
/// fine nodes (region nodes minus domain-boundary nodes).
#[derive(Clone, Debug)]
pub struct SnapshotSpace {
    /// Coarse node id this space belongs to (set by the caller).
    pub region: usize,
    /// Admissible fine nodes of the oversampled region, ascending.
    pub dofs: Vec<usize>,
    /// Orthonormalized snapshot columns (Euclidean, full rank).
    pub columns: Vec<LocalVector>,
}

/// Solves `-div(kappa grad psi) = 0` inside the region with the given values
/// on the region's boundary nodes; `boundary_values` pairs with the free
/// (non-domain-boundary) boundary nodes in ascending node order.
pub fn harmonic_extension(
    hierarchy: &MeshHierarchy,
    a_full: &SparseOperator,
    region: &Region,
    boundary_values: &[f64],
) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    let (interior, boundary_all) = hierarchy.region_nodes_split(region);
    let free_boundary: Vec<usize> = boundary_all
        .iter()
        .copied()
        .filter(|n| !hierarchy.fine_node_on_boundary(*n))
        .collect();
    if boundary_values.len() != free_boundary.len() {
        return Err(Error::dim(format!(
            "harmonic extension: {} boundary values for {} free boundary nodes",
            boundary_values.len(),
            free_boundary.len()
        )));
    }
    let a_ii = a_full.submatrix_symmetric(&interior);
    let a_ib = a_full.submatrix(&interior, &free_boundary);
    let fact = a_ii.factorize()?;
    let rhs: Vec<f64> = a_ib
        .matvec(boundary_values)
        .iter()
        .map(|v| -v)
        .collect();
    let sol = fact.solve(&rhs);
    Ok((interior, sol, free_boundary))
}

/// Generates `count` snapshots on the (oversampled) region, reproducible
/// from `seed`.
///
/// Snapshots are harmonic extensions of i.i.d. standard Gaussian boundary
/// values. When the region's free boundary carries fewer dofs than requested
/// (an oversampled neighborhood can cover the whole domain on small coarse
/// grids), the remaining snapshots solve the local equation with an i.i.d.
/// Gaussian source and zero boundary instead. Fails if `count` exceeds the
/// total local space dimension.
pub fn generate_snapshots(
    hierarchy: &MeshHierarchy,
    a_full: &SparseOperator,
    region_plus: &Region,
    count: usize,
    seed: u64,
) -> Result<SnapshotSpace> {
    assert!(count >= 1, "snapshot count must be at least 1");
    let (interior, boundary_all) = hierarchy.region_nodes_split(region_plus);
    if interior.is_empty() {
        return Err(Error::config(
            "snapshot region has no interior fine nodes".to_string(),
        ));
    }
    let free_boundary: Vec<usize> = boundary_all
        .iter()
        .copied()
        .filter(|n| !hierarchy.fine_node_on_boundary(*n))
        .collect();
    if count > free_boundary.len() + interior.len() {
        return Err(Error::config(format!(
            "requested {count} snapshots but the region boundary carries only {} dofs \
             ({} with interior sources)",
            free_boundary.len(),
            free_boundary.len() + interior.len()
        )));
    }

    // dofs: interior + free boundary, ascending
    let mut dofs: Vec<usize> = interior.iter().chain(&free_boundary).copied().collect();
    dofs.sort_unstable();

    let a_ii = a_full.submatrix_symmetric(&interior);
    let a_ib = a_full.submatrix(&interior, &free_boundary);
    let fact = a_ii.factorize()?;

    let n_boundary_driven = count.min(free_boundary.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut dense = vec![0.0; dofs.len()];
        if k < n_boundary_driven {
            let g: Vec<f64> = (0..free_boundary.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let rhs: Vec<f64> = a_ib.matvec(&g).iter().map(|v| -v).collect();
            let sol = fact.solve(&rhs);
            for (n, v) in free_boundary.iter().zip(&g) {
                dense[dofs.binary_search(n).unwrap()] = *v;
            }
            for (n, v) in interior.iter().zip(&sol) {
                dense[dofs.binary_search(n).unwrap()] = *v;
            }
        } else {
            let r: Vec<f64> = (0..interior.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let sol = fact.solve(&r);
            for (n, v) in interior.iter().zip(&sol) {
                dense[dofs.binary_search(n).unwrap()] = *v;
            }
        }
        columns.push(dense);
    }

    // modified Gram-Schmidt for a well-conditioned, full-rank span
    for k in 0..columns.len() {
        let (head, tail) = columns.split_at_mut(k);
        let col = &mut tail[0];
        for prev in head.iter() {
            let proj = crate::linalg::dot(prev, col);
            crate::linalg::axpy(-proj, prev, col);
        }
        let nrm = crate::linalg::norm2(col);
        if nrm < 1e-12 {
            return Err(Error::Numerics(format!(
                "snapshot column {k} is linearly dependent on earlier columns"
            )));
        }
        for v in col.iter_mut() {
            *v /= nrm;
        }
    }

    let columns = columns
        .into_iter()
        .map(|dense| {
            let (idx, val): (Vec<usize>, Vec<f64>) = dofs
                .iter()
                .zip(&dense)
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (*i, *v))
                .unzip();
            LocalVector::new(idx, val)
        })
        .collect();

    Ok(SnapshotSpace {
        region: 0,
        dofs,
        columns,
    })
}
