//! Lowest-order mixed discretization of the parabolic equation: one normal
//! flux dof per fine edge, cellwise-constant pressure, no-flux boundary.
//!
//! Global edge normals point +x (vertical edges) and +y (horizontal edges).
//! Within a cell the flux basis functions have unit normal component on
//! their own edge and zero on the opposite one; their divergences are
//! `-1/hx, +1/hx, -1/hy, +1/hy` for (left, right, bottom, top).

use super::{FineState, FormulationTag};
use crate::coeff::CoefficientField;
use crate::linalg::{SparseOperator, TripletBuilder};
use crate::mesh::MeshHierarchy;
use crate::{Error, Result};

/// Index maps between all fine edges and the no-flux-eliminated dofs.
#[derive(Clone, Debug)]
pub struct MixedSpace {
    /// Interior fine edges, ascending; velocity dof k lives on edge
    /// `interior_edges[k]`.
    pub interior_edges: Vec<usize>,
    /// Fine edge -> velocity dof, `usize::MAX` for boundary edges.
    pub edge_to_dof: Vec<usize>,
    pub n_cells: usize,
}

impl MixedSpace {
    pub fn new(hierarchy: &MeshHierarchy) -> Self {
        let mut interior_edges = Vec::new();
        let mut edge_to_dof = vec![usize::MAX; hierarchy.n_fine_edges()];
        for e in 0..hierarchy.n_fine_edges() {
            if !hierarchy.fine_edge_on_boundary(e) {
                edge_to_dof[e] = interior_edges.len();
                interior_edges.push(e);
            }
        }
        MixedSpace {
            interior_edges,
            edge_to_dof,
            n_cells: hierarchy.n_fine_cells(),
        }
    }

    pub fn n_velocity_dofs(&self) -> usize {
        self.interior_edges.len()
    }

    /// Expands interior-edge dofs to all fine edges (zero on boundary).
    pub fn expand(&self, dofs: &[f64], hierarchy: &MeshHierarchy) -> Vec<f64> {
        let mut full = vec![0.0; hierarchy.n_fine_edges()];
        for (k, e) in self.interior_edges.iter().enumerate() {
            full[*e] = dofs[k];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior_edges.iter().map(|e| full[*e]).collect()
    }
}

/// All mixed operators for one coefficient snapshot.
pub struct MixedOperators {
    pub space: MixedSpace,
    /// `kappa^{-1}`-weighted velocity mass on interior edges.
    pub mv: SparseOperator,
    /// Divergence coupling, cells x interior edges.
    pub b: SparseOperator,
    /// Transpose of `b`, stored for column access.
    pub bt: SparseOperator,
    /// Velocity mass over all fine edges (for local edge problems).
    pub mv_full: SparseOperator,
    /// Divergence coupling over all fine edges.
    pub b_full: SparseOperator,
    pub bt_full: SparseOperator,
    /// Cell areas (the diagonal pressure mass).
    pub areas: Vec<f64>,
}

/// Assembles the mixed operators. `Mv` couples same-direction edge pairs
/// within each cell with weights `hx*hy/(3 kappa)` (diagonal) and
/// `hx*hy/(6 kappa)` (opposite edge).
pub fn mixed_operators(hierarchy: &MeshHierarchy, field: &CoefficientField) -> MixedOperators {
    assert_eq!(field.len(), hierarchy.n_fine_cells());
    let n_edges = hierarchy.n_fine_edges();
    let n_cells = hierarchy.n_fine_cells();
    let (hx, hy) = (hierarchy.hx, hierarchy.hy);

    let mut tmv = TripletBuilder::with_capacity(8 * n_cells);
    let mut tb = TripletBuilder::with_capacity(4 * n_cells);
    for cell in 0..n_cells {
        let kinv = 1.0 / field.values()[cell];
        let [left, right, bottom, top] = hierarchy.fine_cell_edges(cell);
        let diag = hx * hy / 3.0 * kinv;
        let off = hx * hy / 6.0 * kinv;
        for (a, b) in [(left, right), (bottom, top)] {
            tmv.add(a, a, diag);
            tmv.add(b, b, diag);
            tmv.add(a, b, off);
            tmv.add(b, a, off);
        }
        // int_cell div(w_e): -hy, +hy, -hx, +hx
        tb.add(cell, left, -hy);
        tb.add(cell, right, hy);
        tb.add(cell, bottom, -hx);
        tb.add(cell, top, hx);
    }
    let mv_full = tmv.build(n_edges, n_edges, true);
    let b_full = tb.build(n_cells, n_edges, false);
    let bt_full = transpose(&b_full);

    let space = MixedSpace::new(hierarchy);
    let all_cells: Vec<usize> = (0..n_cells).collect();
    let mv = mv_full.submatrix_symmetric(&space.interior_edges);
    let b = b_full.submatrix(&all_cells, &space.interior_edges);
    let bt = transpose(&b);
    let areas = vec![hx * hy; n_cells];

    MixedOperators {
        space,
        mv,
        b,
        bt,
        mv_full,
        b_full,
        bt_full,
        areas,
    }
}

pub(crate) fn transpose(op: &SparseOperator) -> SparseOperator {
    let mut tb = TripletBuilder::new();
    for j in 0..op.ncols() {
        let rows = op.inner().row_idx_of_col_raw(j);
        let vals = op.inner().val_of_col(j);
        for (r, v) in rows.iter().zip(vals) {
            tb.add(j, *r, *v);
        }
    }
    tb.build(op.ncols(), op.nrows(), op.is_symmetric())
}

/// Builds and factorizes the backward-Euler saddle system
/// `[[Mv, -B^T], [B, Mc/dt]]` over (velocity, pressure).
pub struct MixedStepper {
    fact: crate::linalg::Factorization,
    nv: usize,
    nc: usize,
    areas: Vec<f64>,
    dt: f64,
}

impl MixedStepper {
    pub fn new(ops: &MixedOperators, dt: f64) -> Result<Self> {
        assert!(dt > 0.0);
        let nv = ops.mv.nrows();
        let nc = ops.areas.len();
        let mut tb = TripletBuilder::new();
        for j in 0..nv {
            let rows = ops.mv.inner().row_idx_of_col_raw(j);
            let vals = ops.mv.inner().val_of_col(j);
            for (r, v) in rows.iter().zip(vals) {
                tb.add(*r, j, *v);
            }
        }
        // -B^T in the top-right block, B in the bottom-left
        for j in 0..nv {
            let rows = ops.b.inner().row_idx_of_col_raw(j);
            let vals = ops.b.inner().val_of_col(j);
            for (r, v) in rows.iter().zip(vals) {
                tb.add(j, nv + r, -v);
                tb.add(nv + r, j, *v);
            }
        }
        for c in 0..nc {
            tb.add(nv + c, nv + c, ops.areas[c] / dt);
        }
        let sys = tb.build(nv + nc, nv + nc, false);
        let fact = sys.factorize()?;
        Ok(MixedStepper {
            fact,
            nv,
            nc,
            areas: ops.areas.clone(),
            dt,
        })
    }

    /// One backward-Euler step from pressure `u_prev`; returns
    /// (velocity, pressure).
    pub fn step(&self, u_prev: &[f64], f_cells: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(u_prev.len(), self.nc);
        let mut rhs = vec![0.0; self.nv + self.nc];
        for c in 0..self.nc {
            rhs[self.nv + c] = self.areas[c] * (u_prev[c] / self.dt + f_cells[c]);
        }
        let sol = self.fact.solve(&rhs);
        (sol[..self.nv].to_vec(), sol[self.nv..].to_vec())
    }
}

/// Backward-Euler marching of the fine mixed system; the reference oracle.
/// States carry `[velocity dofs..., cell pressures...]`.
pub fn fine_solve_mixed(
    ops: &MixedOperators,
    u0_cells: &[f64],
    f_cells: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Vec<FineState>> {
    if u0_cells.len() != ops.areas.len() || f_cells.len() != ops.areas.len() {
        return Err(Error::dim("mixed solve: cell vector length"));
    }
    let stepper = MixedStepper::new(ops, dt)?;
    let nv = ops.mv.nrows();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut init = vec![0.0; nv];
    init.extend_from_slice(u0_cells);
    states.push(FineState::new(init, 0.0, FormulationTag::Mixed));
    let mut u = u0_cells.to_vec();
    for step in 0..n_steps {
        let (v, unew) = stepper.step(&u, f_cells);
        u = unew;
        let mut dofs = v;
        dofs.extend_from_slice(&u);
        states.push(FineState::new(
            dofs,
            (step + 1) as f64 * dt,
            FormulationTag::Mixed,
        ));
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;

    #[test]
    fn single_cell_velocity_mass_entries() {
        let h = build_hierarchy(1, 1, 1, 1, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(1, 1.0);
        let ops = mixed_operators(&h, &f);
        let d = ops.mv_full.to_dense();
        let [left, right, bottom, top] = h.fine_cell_edges(0);
        assert!((d[(left, left)] - 1.0 / 3.0).abs() < 1e-14);
        assert!((d[(right, right)] - 1.0 / 3.0).abs() < 1e-14);
        assert!((d[(left, right)] - 1.0 / 6.0).abs() < 1e-14);
        assert!((d[(bottom, top)] - 1.0 / 6.0).abs() < 1e-14);
        assert_eq!(d[(left, bottom)], 0.0);
    }

    #[test]
    fn divergence_row_matches_outward_perimeter_flux() {
        let h = build_hierarchy(1, 1, 1, 1, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(1, 1.0);
        let ops = mixed_operators(&h, &f);
        // outward unit normal components: left -1, right +1, bottom -1, top +1
        let [left, right, bottom, top] = h.fine_cell_edges(0);
        let mut flux = vec![0.0; h.n_fine_edges()];
        flux[left] = -1.0;
        flux[right] = 1.0;
        flux[bottom] = -1.0;
        flux[top] = 1.0;
        let div = ops.b_full.matvec(&flux);
        assert!((div[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn velocity_mass_scales_inversely_with_coefficient() {
        let h = build_hierarchy(2, 2, 1, 1, 1.0, 1.0).unwrap();
        let f1 = CoefficientField::uniform(4, 1.0);
        let f2 = CoefficientField::uniform(4, 2.0);
        let a = mixed_operators(&h, &f1);
        let b = mixed_operators(&h, &f2);
        let da = a.mv.to_dense();
        let db = b.mv.to_dense();
        for i in 0..a.mv.nrows() {
            for j in 0..a.mv.ncols() {
                assert!((da[(i, j)] - 2.0 * db[(i, j)]).abs() < 1e-13);
            }
        }
        // B is independent of the coefficient
        let ba = a.b.to_dense();
        let bb = b.b.to_dense();
        for i in 0..a.b.nrows() {
            for j in 0..a.b.ncols() {
                assert_eq!(ba[(i, j)], bb[(i, j)]);
            }
        }
    }

    #[test]
    fn mass_is_conserved_without_source() {
        // no-flux boundary: total pressure mass is invariant when f = 0
        let h = build_hierarchy(6, 6, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(36, 1.0);
        let ops = mixed_operators(&h, &f);
        let mut u0 = vec![0.0; 36];
        u0[14] = 1.0;
        let states = fine_solve_mixed(&ops, &u0, &vec![0.0; 36], 0.05, 4).unwrap();
        let nv = ops.mv.nrows();
        let total =
            |s: &FineState| -> f64 { s.dofs[nv..].iter().zip(&ops.areas).map(|(u, a)| u * a).sum() };
        let t0 = total(&states[0]);
        for s in &states {
            assert!((total(s) - t0).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_state_is_steady_without_source() {
        let h = build_hierarchy(4, 4, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(16, 3.0);
        let ops = mixed_operators(&h, &f);
        let u0 = vec![2.0; 16];
        let states = fine_solve_mixed(&ops, &u0, &vec![0.0; 16], 0.1, 3).unwrap();
        let nv = ops.mv.nrows();
        for s in &states[1..] {
            for v in &s.dofs[..nv] {
                assert!(v.abs() < 1e-11, "velocity should vanish, got {v}");
            }
            for u in &s.dofs[nv..] {
                assert!((u - 2.0).abs() < 1e-11);
            }
        }
    }
}
