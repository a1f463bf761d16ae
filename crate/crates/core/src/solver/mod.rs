//! Corrector, flux-corrector and divergence-form solves on the torus.

pub mod cg;
pub mod corrector;
pub mod dense;
pub mod operator;

pub use cg::{CgOutcome, SolveStats};
pub use corrector::{
    compute_flux, homogenized_matrix, solve_corrector, solve_divergence_rhs, solve_extended_corrector, solve_flux_corrector,
    CorrectorSolution, HomogenizedMatrix, SolverConfig, DEFAULT_TOL,
};
pub use operator::{DiscreteOperator, Scheme};
