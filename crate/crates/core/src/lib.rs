//! Finite-mode truncations of the grand-canonical 2D Bose gas and of the
//! Wick-renormalized classical field ensemble, plus the machinery to compare
//! the two along a high-temperature / mean-field schedule.
//!
//! The crate is organized around five subsystems:
//!
//! - [`model`]: Fourier mode sets on the unit torus, pair potentials,
//!   counterterm sums and the coupled (lambda, nu, E0) schedule.
//! - [`classical`]: spectral sampling of the Gaussian free field,
//!   renormalized interaction energies, importance-reweighted ensembles and
//!   their moment matrices.
//! - [`fock`]: truncated bosonic occupation bases and second-quantized
//!   operators as sparse matrices.
//! - [`gibbs`]: exact per-sector diagonalization of the grand-canonical
//!   Gibbs state, free energies and reduced k-body density matrices.
//! - [`compare`]: Schatten-norm gaps between scaled quantum density matrices
//!   and classical moment matrices, convergence verdicts.

pub mod classical;
pub mod compare;
pub mod error;
pub mod fock;
pub mod gibbs;
pub mod model;

pub use error::{Error, Result};

// Numeric foundations, re-exported so downstream crates stay on one version.
pub use nalgebra;
pub use num_complex;
pub use rand;
pub use rand_chacha;
