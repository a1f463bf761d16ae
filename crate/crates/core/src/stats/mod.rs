//! Monte Carlo experiments and their estimators.

pub mod growth;
pub mod moments;
pub mod montecarlo;
pub mod seeds;
pub mod sensitivity;
pub mod sgap;
pub mod survival;
