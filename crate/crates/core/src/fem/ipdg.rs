//! Symmetric interior-penalty discontinuous Galerkin discretization of the
//! wave equation on broken Q1 elements, with central differences in time.
//!
//! Each fine cell carries four dofs ordered (bl, br, tr, tl) at indices
//! `4*cell .. 4*cell+4`. Face terms use arithmetic averages of the one-sided
//! fluxes `a grad(u) . n` and a harmonic-mean face coefficient in the
//! `gamma/h` penalty; boundary faces take one-sided traces with `[u] = u`,
//! which enforces the homogeneous Dirichlet condition weakly.

use super::{q1_mass_local, q1_stiffness_local, FineState, FormulationTag};
use crate::coeff::CoefficientField;
use crate::linalg::{SparseOperator, TripletBuilder};
use crate::mesh::MeshHierarchy;
use crate::{Error, Result};

pub fn n_broken_dofs(hierarchy: &MeshHierarchy) -> usize {
    4 * hierarchy.n_fine_cells()
}

/// Broken (block-diagonal) mass matrix.
pub fn assemble_broken_mass(hierarchy: &MeshHierarchy) -> SparseOperator {
    let me = q1_mass_local(hierarchy.hx, hierarchy.hy);
    let n = n_broken_dofs(hierarchy);
    let mut tm = TripletBuilder::with_capacity(16 * hierarchy.n_fine_cells());
    for cell in 0..hierarchy.n_fine_cells() {
        for i in 0..4 {
            for j in 0..4 {
                tm.add(4 * cell + i, 4 * cell + j, me[i][j]);
            }
        }
    }
    tm.build(n, n, true)
}

/// Assembles the symmetric interior-penalty form with penalty `gamma`.
pub fn assemble_ipdg(
    hierarchy: &MeshHierarchy,
    field: &CoefficientField,
    gamma: f64,
) -> SparseOperator {
    assert!(gamma > 0.0, "penalty parameter must be positive");
    assert_eq!(field.len(), hierarchy.n_fine_cells());
    let n = n_broken_dofs(hierarchy);
    let (hx, hy) = (hierarchy.hx, hierarchy.hy);
    let ke = q1_stiffness_local(hx, hy);
    let mut tb = TripletBuilder::new();

    // volume terms
    for cell in 0..hierarchy.n_fine_cells() {
        let a = field.values()[cell];
        for i in 0..4 {
            for j in 0..4 {
                tb.add(4 * cell + i, 4 * cell + j, a * ke[i][j]);
            }
        }
    }

    // face terms
    for edge in 0..hierarchy.n_fine_edges() {
        let (ca, cb) = hierarchy.fine_edge_cells(edge);
        let vertical = hierarchy.fine_edge_is_vertical(edge);
        let len = hierarchy.fine_edge_len(edge);
        match (ca, cb) {
            (Some(a), Some(b)) => {
                // interior face, normal from a to b (+x or +y)
                let (aa, ab) = (field.values()[a], field.values()[b]);
                let a_face = 2.0 * aa * ab / (aa + ab);
                let dofs: Vec<usize> = (0..4)
                    .map(|i| 4 * a + i)
                    .chain((0..4).map(|i| 4 * b + i))
                    .collect();
                let mut jump = [[0.0; 8]; 2];
                let mut flux = [[0.0; 8]; 2];
                if vertical {
                    // trace of a on its right edge (br, tr), b on its left (bl, tl)
                    jump[0][1] = 1.0;
                    jump[1][2] = 1.0;
                    jump[0][4] = -1.0;
                    jump[1][7] = -1.0;
                    // d/dx on each side, averaged with own coefficient
                    let (wa, wb) = (0.5 * aa / hx, 0.5 * ab / hx);
                    flux[0][0] = -wa;
                    flux[0][1] = wa;
                    flux[1][3] = -wa;
                    flux[1][2] = wa;
                    flux[0][4] = -wb;
                    flux[0][5] = wb;
                    flux[1][7] = -wb;
                    flux[1][6] = wb;
                } else {
                    // trace of a on its top edge (tl, tr), b on its bottom (bl, br)
                    jump[0][3] = 1.0;
                    jump[1][2] = 1.0;
                    jump[0][4] = -1.0;
                    jump[1][5] = -1.0;
                    let (wa, wb) = (0.5 * aa / hy, 0.5 * ab / hy);
                    flux[0][0] = -wa;
                    flux[0][3] = wa;
                    flux[1][1] = -wa;
                    flux[1][2] = wa;
                    flux[0][4] = -wb;
                    flux[0][7] = wb;
                    flux[1][5] = -wb;
                    flux[1][6] = wb;
                }
                add_face_block(&mut tb, &dofs, &jump, &flux, len, gamma / len * a_face);
            }
            (single, _) => {
                // boundary face: one-sided trace, [u] = u, full flux weight
                let c = single.or(cb).unwrap();
                let outward_positive = single.is_none(); // cell sits on the negative side
                let a_c = field.values()[c];
                let dofs: Vec<usize> = (0..4).map(|i| 4 * c + i).collect();
                let mut jump = [[0.0; 8]; 2];
                let mut flux = [[0.0; 8]; 2];
                // sign of the outward normal along the axis
                let s = if outward_positive { -1.0 } else { 1.0 };
                if vertical {
                    if outward_positive {
                        // domain's left boundary: trace on cell's left edge
                        jump[0][0] = 1.0;
                        jump[1][3] = 1.0;
                    } else {
                        jump[0][1] = 1.0;
                        jump[1][2] = 1.0;
                    }
                    let w = s * a_c / hx;
                    flux[0][0] = -w;
                    flux[0][1] = w;
                    flux[1][3] = -w;
                    flux[1][2] = w;
                } else {
                    if outward_positive {
                        // bottom boundary: trace on cell's bottom edge
                        jump[0][0] = 1.0;
                        jump[1][1] = 1.0;
                    } else {
                        jump[0][3] = 1.0;
                        jump[1][2] = 1.0;
                    }
                    let w = s * a_c / hy;
                    flux[0][0] = -w;
                    flux[0][3] = w;
                    flux[1][1] = -w;
                    flux[1][2] = w;
                }
                add_face_block(&mut tb, &dofs, &jump, &flux, len, gamma / len * a_c);
            }
        }
    }

    tb.build(n, n, true)
}

/// Adds `-J^T E F - F^T E J + pen J^T E J` over the face, where rows of
/// `jump`/`flux` hold endpoint values as linear maps of the cell dofs and
/// `E = len/6 [[2,1],[1,2]]` integrates products of linear functions.
fn add_face_block(
    tb: &mut TripletBuilder,
    dofs: &[usize],
    jump: &[[f64; 8]; 2],
    flux: &[[f64; 8]; 2],
    len: f64,
    pen: f64,
) {
    let e = [[len / 3.0, len / 6.0], [len / 6.0, len / 3.0]];
    let k = dofs.len();
    for i in 0..k {
        for j in 0..k {
            let mut v = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    v -= jump[p][i] * e[p][q] * flux[q][j];
                    v -= flux[p][i] * e[p][q] * jump[q][j];
                    v += pen * jump[p][i] * e[p][q] * jump[q][j];
                }
            }
            if v != 0.0 {
                tb.add(dofs[i], dofs[j], v);
            }
        }
    }
}

/// Injects a conforming nodal field (all fine nodes) into the broken space.
pub fn inject_nodal(hierarchy: &MeshHierarchy, nodal: &[f64]) -> Vec<f64> {
    assert_eq!(nodal.len(), hierarchy.n_fine_nodes());
    let mut broken = vec![0.0; n_broken_dofs(hierarchy)];
    for cell in 0..hierarchy.n_fine_cells() {
        let nodes = hierarchy.fine_cell_nodes(cell);
        for (i, node) in nodes.iter().enumerate() {
            broken[4 * cell + i] = nodal[*node];
        }
    }
    broken
}

/// Cell averages of a broken field (for visualization and statistics).
pub fn cell_averages(hierarchy: &MeshHierarchy, broken: &[f64]) -> Vec<f64> {
    (0..hierarchy.n_fine_cells())
        .map(|c| 0.25 * (0..4).map(|i| broken[4 * c + i]).sum::<f64>())
        .collect()
}

/// Applies the inverse broken mass (exact per-cell 4x4 solve).
pub struct BrokenMassInverse {
    inv: [[f64; 4]; 4],
}

impl BrokenMassInverse {
    pub fn new(hierarchy: &MeshHierarchy) -> Self {
        let me = q1_mass_local(hierarchy.hx, hierarchy.hy);
        let m = faer::Mat::from_fn(4, 4, |i, j| me[i][j]);
        let lu = m.partial_piv_lu();
        let id = faer::Mat::<f64>::identity(4, 4);
        let minv = faer::linalg::solvers::Solve::solve(&lu, &id);
        let mut inv = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                inv[i][j] = minv[(i, j)];
            }
        }
        BrokenMassInverse { inv }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n_cells = x.len() / 4;
        let mut y = vec![0.0; x.len()];
        for c in 0..n_cells {
            for i in 0..4 {
                let mut s = 0.0;
                for j in 0..4 {
                    s += self.inv[i][j] * x[4 * c + j];
                }
                y[4 * c + i] = s;
            }
        }
        y
    }
}

/// Estimates the largest eigenvalue of `M^{-1} A` by power iteration.
pub fn max_generalized_eigenvalue_estimate(
    a: &SparseOperator,
    minv: &BrokenMassInverse,
    iters: usize,
) -> f64 {
    let n = a.nrows();
    let mut x: Vec<f64> = (0..n)
        .map(|i| ((i * 2654435761 % 1000) as f64 / 1000.0) - 0.5)
        .collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = minv.apply(&a.matvec(&x));
        let nrm = crate::linalg::norm2(&y);
        if nrm == 0.0 {
            return 0.0;
        }
        lambda = crate::linalg::dot(&x, &y) / crate::linalg::dot(&x, &x);
        x = y.iter().map(|v| v / nrm).collect();
    }
    lambda.abs()
}

/// Central-difference marching of `M u'' + A u = M f`; the reference oracle.
///
/// Returns states at `t = 0, dt, ..., n_steps*dt`, starting from the two
/// given initial levels. The explicit scheme requires
/// `dt^2 < 4 / lambda_max(M^{-1} A)`, checked via power iteration.
pub fn fine_solve_wave(
    a_dg: &SparseOperator,
    hierarchy: &MeshHierarchy,
    u0: &[f64],
    u1: &[f64],
    f: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Vec<FineState>> {
    let n = a_dg.nrows();
    if u0.len() != n || u1.len() != n || f.len() != n {
        return Err(Error::dim("wave solve: broken dof vector length"));
    }
    assert!(dt > 0.0 && n_steps >= 1);
    let minv = BrokenMassInverse::new(hierarchy);
    let lmax = max_generalized_eigenvalue_estimate(a_dg, &minv, 60);
    if lmax > 0.0 && dt * dt >= 4.0 / lmax {
        return Err(Error::config(format!(
            "wave time step dt = {dt} violates the stability bound; require dt < {:.6e}",
            (4.0 / lmax).sqrt()
        )));
    }

    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(FineState::new(u0.to_vec(), 0.0, FormulationTag::Ipdg));
    states.push(FineState::new(u1.to_vec(), dt, FormulationTag::Ipdg));
    let mut prev = u0.to_vec();
    let mut curr = u1.to_vec();
    for step in 1..n_steps {
        let au = a_dg.matvec(&curr);
        let correction = minv.apply(&au);
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] = 2.0 * curr[i] - prev[i] + dt * dt * (f[i] - correction[i]);
        }
        prev = curr;
        curr = next;
        states.push(FineState::new(
            curr.clone(),
            (step + 1) as f64 * dt,
            FormulationTag::Ipdg,
        ));
    }
    Ok(states)
}
