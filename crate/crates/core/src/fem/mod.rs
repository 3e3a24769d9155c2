//! Fine-grid discretizations and reference (oracle) solvers.
//!
//! Three formulations are provided:
//!
//! * [`cg`] — continuous bilinear (Q1) elements for the parabolic equation,
//!   homogeneous Dirichlet boundary, backward Euler in time;
//! * [`mixed`] — lowest-order edge-flux velocity / cellwise-constant
//!   pressure for the parabolic equation in mixed form, no-flux boundary;
//! * [`ipdg`] — symmetric interior-penalty discontinuous Galerkin for the
//!   wave equation, central differences in time.
//!
//! Coefficients are constant per fine cell and all element integrals are
//! exact for that class of data.

pub mod cg;
pub mod ipdg;
pub mod mixed;

/// Which discretization a dof vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormulationTag {
    Cg,
    Mixed,
    Ipdg,
}

/// A fine-grid state: dof vector at a time instant.
///
/// For the mixed formulation the dofs are the interior-edge fluxes followed
/// by the cell pressures.
#[derive(Clone, Debug)]
pub struct FineState {
    pub dofs: Vec<f64>,
    pub t: f64,
    pub tag: FormulationTag,
}

impl FineState {
    pub fn new(dofs: Vec<f64>, t: f64, tag: FormulationTag) -> Self {
        FineState { dofs, t, tag }
    }
}

/// Q1 element stiffness on an `hx x hy` rectangle with unit coefficient,
/// corner order (bl, br, tr, tl).
pub(crate) fn q1_stiffness_local(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let kxi = [
        [2.0, -2.0, -1.0, 1.0],
        [-2.0, 2.0, 1.0, -1.0],
        [-1.0, 1.0, 2.0, -2.0],
        [1.0, -1.0, -2.0, 2.0],
    ];
    let keta = [
        [2.0, 1.0, -1.0, -2.0],
        [1.0, 2.0, -2.0, -1.0],
        [-1.0, -2.0, 2.0, 1.0],
        [-2.0, -1.0, 1.0, 2.0],
    ];
    let cx = hy / hx / 6.0;
    let cy = hx / hy / 6.0;
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = cx * kxi[i][j] + cy * keta[i][j];
        }
    }
    out
}

/// Q1 element mass on an `hx x hy` rectangle, corner order (bl, br, tr, tl).
pub(crate) fn q1_mass_local(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let base = [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ];
    let c = hx * hy / 36.0;
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = c * base[i][j];
        }
    }
    out
}
