//! Spectral workbench for convex-integration constructions for viscous, resistive MHD on T³.

pub mod building_flows;
pub mod cutoffs_gaps;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod gluing;
pub mod inverse_divergence;
pub mod io;
pub mod iteration;
pub mod mhd_solver;
pub mod perturbation;
pub mod products;
pub mod quad;
pub mod smooth;
pub mod torus_field;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use torus_field::{Field, Grid, NormSpec, Rank, Samples, Symmetry};
