//! Continuous Galerkin (bilinear Q1) discretization of the parabolic
//! equation with homogeneous Dirichlet boundary and backward Euler in time.

use super::{q1_mass_local, q1_stiffness_local, FineState, FormulationTag};
use crate::coeff::CoefficientField;
use crate::linalg::{SparseOperator, TripletBuilder};
use crate::mesh::MeshHierarchy;
use crate::{Error, Result};

/// Index maps between all fine nodes and the Dirichlet-eliminated dofs.
#[derive(Clone, Debug)]
pub struct CgSpace {
    /// Interior fine nodes, ascending; dof k lives at node `interior[k]`.
    pub interior: Vec<usize>,
    /// Node id -> dof index, `usize::MAX` for boundary nodes.
    pub node_to_dof: Vec<usize>,
}

impl CgSpace {
    pub fn new(hierarchy: &MeshHierarchy) -> Self {
        let mut interior = Vec::new();
        let mut node_to_dof = vec![usize::MAX; hierarchy.n_fine_nodes()];
        for node in 0..hierarchy.n_fine_nodes() {
            if !hierarchy.fine_node_on_boundary(node) {
                node_to_dof[node] = interior.len();
                interior.push(node);
            }
        }
        CgSpace { interior, node_to_dof }
    }

    pub fn n_dofs(&self) -> usize {
        self.interior.len()
    }

    /// Expands an interior dof vector to all fine nodes (zero on boundary).
    pub fn expand(&self, dofs: &[f64], hierarchy: &MeshHierarchy) -> Vec<f64> {
        let mut full = vec![0.0; hierarchy.n_fine_nodes()];
        for (k, node) in self.interior.iter().enumerate() {
            full[*node] = dofs[k];
        }
        full
    }

    /// Restricts a full-node vector to interior dofs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|n| full[*n]).collect()
    }
}

/// All CG operators for one coefficient snapshot.
pub struct CgOperators {
    pub space: CgSpace,
    /// Mass and stiffness on interior dofs (Dirichlet-eliminated).
    pub mass: SparseOperator,
    pub stiffness: SparseOperator,
    /// Mass and stiffness over all fine nodes (no boundary condition);
    /// used for local region problems and partition-of-unity weights.
    pub mass_full: SparseOperator,
    pub stiffness_full: SparseOperator,
}

/// Assembles mass and stiffness over all fine nodes (no boundary condition).
pub fn assemble_cg_full(
    hierarchy: &MeshHierarchy,
    field: &CoefficientField,
) -> (SparseOperator, SparseOperator) {
    assert_eq!(
        field.len(),
        hierarchy.n_fine_cells(),
        "field does not match hierarchy"
    );
    let n = hierarchy.n_fine_nodes();
    let ke = q1_stiffness_local(hierarchy.hx, hierarchy.hy);
    let me = q1_mass_local(hierarchy.hx, hierarchy.hy);
    let mut ta = TripletBuilder::with_capacity(16 * hierarchy.n_fine_cells());
    let mut tm = TripletBuilder::with_capacity(16 * hierarchy.n_fine_cells());
    for cell in 0..hierarchy.n_fine_cells() {
        let nodes = hierarchy.fine_cell_nodes(cell);
        let k = field.values()[cell];
        for i in 0..4 {
            for j in 0..4 {
                ta.add(nodes[i], nodes[j], k * ke[i][j]);
                tm.add(nodes[i], nodes[j], me[i][j]);
            }
        }
    }
    (tm.build(n, n, true), ta.build(n, n, true))
}

/// Assembles a weighted mass matrix over all fine nodes with the given
/// per-cell weights (used for the spectral problem's S form).
pub fn assemble_weighted_mass_full(
    hierarchy: &MeshHierarchy,
    cell_weights: &[f64],
) -> SparseOperator {
    assert_eq!(cell_weights.len(), hierarchy.n_fine_cells());
    let n = hierarchy.n_fine_nodes();
    let me = q1_mass_local(hierarchy.hx, hierarchy.hy);
    let mut tm = TripletBuilder::with_capacity(16 * hierarchy.n_fine_cells());
    for cell in 0..hierarchy.n_fine_cells() {
        let nodes = hierarchy.fine_cell_nodes(cell);
        let w = cell_weights[cell];
        for i in 0..4 {
            for j in 0..4 {
                tm.add(nodes[i], nodes[j], w * me[i][j]);
            }
        }
    }
    tm.build(n, n, true)
}

/// Assembles the Dirichlet-eliminated operators together with the full ones.
pub fn cg_operators(hierarchy: &MeshHierarchy, field: &CoefficientField) -> CgOperators {
    let (mass_full, stiffness_full) = assemble_cg_full(hierarchy, field);
    let space = CgSpace::new(hierarchy);
    let mass = mass_full.submatrix_symmetric(&space.interior);
    let stiffness = stiffness_full.submatrix_symmetric(&space.interior);
    CgOperators {
        space,
        mass,
        stiffness,
        mass_full,
        stiffness_full,
    }
}

/// Assembles `(M, A)` on interior dofs only.
pub fn assemble_cg(
    hierarchy: &MeshHierarchy,
    field: &CoefficientField,
) -> (SparseOperator, SparseOperator) {
    let ops = cg_operators(hierarchy, field);
    (ops.mass, ops.stiffness)
}

/// Assembles stiffness (with `kappa_cells`) and weighted mass (with
/// `weight_cells`) over exactly the given fine cells, in the local numbering
/// of the sorted `dofs` node list. Corner nodes not present in `dofs`
/// (eliminated boundary nodes) are skipped.
pub fn assemble_region_forms(
    hierarchy: &MeshHierarchy,
    cells: &[usize],
    dofs: &[usize],
    kappa_cells: &[f64],
    weight_cells: &[f64],
) -> (SparseOperator, SparseOperator) {
    let mut node_map = vec![usize::MAX; hierarchy.n_fine_nodes()];
    for (k, n) in dofs.iter().enumerate() {
        node_map[*n] = k;
    }
    let ke = q1_stiffness_local(hierarchy.hx, hierarchy.hy);
    let me = q1_mass_local(hierarchy.hx, hierarchy.hy);
    let mut ta = TripletBuilder::with_capacity(16 * cells.len());
    let mut ts = TripletBuilder::with_capacity(16 * cells.len());
    for cell in cells {
        let nodes = hierarchy.fine_cell_nodes(*cell);
        let kap = kappa_cells[*cell];
        let w = weight_cells[*cell];
        for i in 0..4 {
            let li = node_map[nodes[i]];
            if li == usize::MAX {
                continue;
            }
            for j in 0..4 {
                let lj = node_map[nodes[j]];
                if lj == usize::MAX {
                    continue;
                }
                ta.add(li, lj, kap * ke[i][j]);
                ts.add(li, lj, w * me[i][j]);
            }
        }
    }
    let n = dofs.len();
    (ta.build(n, n, true), ts.build(n, n, true))
}

/// Backward Euler marching of `(M + dt A) u^{n+1} = M u^n + dt M f`.
///
/// Returns all states including the initial one; this is the reference
/// oracle for the parabolic runs.
pub fn fine_solve_parabolic(
    mass: &SparseOperator,
    stiffness: &SparseOperator,
    u0: &[f64],
    f: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Vec<FineState>> {
    assert!(dt > 0.0, "dt must be positive");
    let n = mass.nrows();
    if u0.len() != n || f.len() != n || stiffness.nrows() != n {
        return Err(Error::dim(format!(
            "parabolic solve dims: mass {n}, stiffness {}, u0 {}, f {}",
            stiffness.nrows(),
            u0.len(),
            f.len()
        )));
    }
    // system matrix M + dt A
    let mut tb = TripletBuilder::new();
    for (op, scale) in [(mass, 1.0), (stiffness, dt)] {
        for j in 0..n {
            let rows = op.inner().row_idx_of_col_raw(j);
            let vals = op.inner().val_of_col(j);
            for (r, v) in rows.iter().zip(vals) {
                tb.add(*r, j, scale * v);
            }
        }
    }
    let sys = tb.build(n, n, true);
    let fact = sys.factorize()?;

    let mf = mass.matvec(f);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(FineState::new(u0.to_vec(), 0.0, FormulationTag::Cg));
    let mut u = u0.to_vec();
    for step in 0..n_steps {
        let mut rhs = mass.matvec(&u);
        for (r, m) in rhs.iter_mut().zip(&mf) {
            *r += dt * m;
        }
        u = fact.solve(&rhs);
        states.push(FineState::new(
            u.clone(),
            (step + 1) as f64 * dt,
            FormulationTag::Cg,
        ));
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;

    #[test]
    fn single_cell_grid_eliminates_everything() {
        let h = build_hierarchy(1, 1, 1, 1, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(1, 1.0);
        let (m, a) = assemble_cg(&h, &f);
        assert_eq!(m.nrows(), 0);
        assert_eq!(a.nrows(), 0);
    }

    #[test]
    fn two_by_two_interior_entries_match_hand_quadrature() {
        let h = build_hierarchy(2, 2, 1, 1, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(4, 1.0);
        let (m, a) = assemble_cg(&h, &f);
        assert_eq!(a.nrows(), 1);
        assert!((a.to_dense()[(0, 0)] - 8.0 / 3.0).abs() < 1e-14);
        assert!((m.to_dense()[(0, 0)] - 1.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn stiffness_is_linear_in_coefficient() {
        let h = build_hierarchy(4, 4, 2, 2, 1.0, 1.0).unwrap();
        let f1 = CoefficientField::uniform(16, 1.0);
        let f3 = CoefficientField::uniform(16, 3.0);
        let (_, a1) = assemble_cg(&h, &f1);
        let (_, a3) = assemble_cg(&h, &f3);
        let d1 = a1.to_dense();
        let d3 = a3.to_dense();
        for i in 0..a1.nrows() {
            for j in 0..a1.ncols() {
                assert!((3.0 * d1[(i, j)] - d3[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn neumann_stiffness_annihilates_constants() {
        let h = build_hierarchy(5, 4, 1, 1, 1.3, 0.7).unwrap();
        let f = CoefficientField::uniform(20, 2.5);
        let (_, a_full) = assemble_cg_full(&h, &f);
        let ones = vec![1.0; h.n_fine_nodes()];
        let r = a_full.matvec(&ones);
        for v in r {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn parabolic_zero_data_stays_zero() {
        let h = build_hierarchy(4, 4, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(16, 1.0);
        let (m, a) = assemble_cg(&h, &f);
        let n = m.nrows();
        let states = fine_solve_parabolic(&m, &a, &vec![0.0; n], &vec![0.0; n], 0.1, 3).unwrap();
        for s in states {
            assert!(s.dofs.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn parabolic_zero_stiffness_grows_linearly() {
        // A = 0 -> u^{n} = u0 + n dt f
        let mut tm = TripletBuilder::new();
        tm.add(0, 0, 2.0);
        tm.add(1, 1, 0.5);
        let m = tm.build(2, 2, true);
        let a = TripletBuilder::new().build(2, 2, true);
        let u0 = [1.0, -1.0];
        let f = [3.0, 2.0];
        let states = fine_solve_parabolic(&m, &a, &u0, &f, 0.25, 4).unwrap();
        for (k, s) in states.iter().enumerate() {
            let t = k as f64 * 0.25;
            assert!((s.dofs[0] - (1.0 + t * 3.0)).abs() < 1e-12);
            assert!((s.dofs[1] - (-1.0 + t * 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn parabolic_two_dof_diagonal_hand_solve() {
        // M = I, A = diag(1,2), u0 = (1,1), f = 0, dt = 0.1
        let mut tm = TripletBuilder::new();
        tm.add(0, 0, 1.0);
        tm.add(1, 1, 1.0);
        let m = tm.build(2, 2, true);
        let mut ta = TripletBuilder::new();
        ta.add(0, 0, 1.0);
        ta.add(1, 1, 2.0);
        let a = ta.build(2, 2, true);
        let states = fine_solve_parabolic(&m, &a, &[1.0, 1.0], &[0.0, 0.0], 0.1, 1).unwrap();
        assert!((states[1].dofs[0] - 1.0 / 1.1).abs() < 1e-14);
        assert!((states[1].dofs[1] - 1.0 / 1.2).abs() < 1e-14);
    }

    #[test]
    fn backward_euler_is_unconditionally_stable() {
        use rand::{RngExt, SeedableRng};
        let h = build_hierarchy(6, 6, 2, 2, 1.0, 1.0).unwrap();
        let f = CoefficientField::uniform(36, 4.0);
        let (m, a) = assemble_cg(&h, &f);
        let n = m.nrows();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let u0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let states =
            fine_solve_parabolic(&m, &a, &u0, &vec![0.0; n], 5.0, 4).unwrap();
        let mnorm = |u: &[f64]| m.form(u, u).sqrt();
        for w in states.windows(2) {
            assert!(mnorm(&w[1].dofs) <= mnorm(&w[0].dofs) + 1e-12);
        }
    }
}
