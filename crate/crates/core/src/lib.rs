//! Multiscale finite element solvers for time-dependent heterogeneous PDEs
//! (parabolic and wave) with probabilistic treatment of un-resolved coarse
//! content: a few spectral basis functions per coarse region are kept as
//! permanent, and additional candidates are sampled from a residual-driven
//! posterior, producing ensembles of approximate solutions with uncertainty
//! statistics.
//!
//! The crate is organized along the pipeline:
//!
//! * [`mesh`] — nested Cartesian coarse/fine grids and region topology,
//! * [`coeff`] — heterogeneous coefficient fields and time rescaling,
//! * [`fem`] — fine-grid discretizations and reference solvers
//!   (continuous Galerkin, lowest-order mixed, interior-penalty DG),
//! * [`gmsfem`] — snapshot spaces, local spectral problems, and the split
//!   into permanent and candidate basis functions,
//! * [`residual`] — discrete residuals tested against snapshot spaces,
//! * [`bayes`] — residual-driven priors, likelihoods, and flip odds,
//! * [`sampler`] — sequential and Gibbs sampling over basis selections,
//! * [`march`] — time-marching orchestration of the two posterior variants,
//! * [`diagnostics`] — errors against oracles and tabular outputs,
//! * [`config`] — run plans parsed from `key = value` config files,
//! * [`io`] — field files, the binary basis cache, CSV and manifests.

pub mod bayes;
pub mod coeff;
pub mod config;
pub mod diagnostics;
pub mod fem;
pub mod gmsfem;
pub mod io;
pub mod linalg;
pub mod march;
pub mod mesh;
pub mod residual;
pub mod sampler;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad grid sizes, unknown keys, out-of-range values).
    #[error("configuration error: {0}")]
    Config(String),

    /// A data file could not be loaded or failed validation.
    #[error("load error: {0}")]
    Load(String),

    /// Mismatched dimensions between operators, states, or test spaces.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A linear solve failed (singular or numerically unusable system).
    #[error("solver failure: {0}")]
    Solver(String),

    /// A numerical precondition was violated at run time.
    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub(crate) fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }
}

/// Derives a child RNG seed from a master seed, a purpose tag, and an index.
///
/// Uses FNV-1a over the raw bytes so derived streams are stable across
/// platforms and releases; all randomness in a run flows from the master
/// seed through this function.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in master
        .to_le_bytes()
        .iter()
        .chain(purpose.as_bytes())
        .chain(index.to_le_bytes().iter())
    {
        h ^= *b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, "snapshots", 0);
        let b = derive_seed(7, "snapshots", 1);
        let c = derive_seed(7, "sampler", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        // frozen value: stability contract across releases
        assert_eq!(a, derive_seed(7, "snapshots", 0));
    }
}
