//! Quantum defect embedding on finite model Hamiltonians.
//!
//! The pipeline runs a mean-field calculation on a lattice model, builds the
//! RPA-screened interaction, partitions the orbitals into an active space and
//! its environment, and derives an effective active-space Hamiltonian whose
//! double counting is either exact at the G0W0 level (EDC) or the
//! Hartree-Fock-like approximation (HFDC). The effective Hamiltonian is then
//! diagonalized exactly.

pub mod activespace;
pub mod embedding;
pub mod error;
pub mod fci;
pub mod greens;
pub mod meanfield;
pub mod model;
pub mod output;
pub mod pipeline;
pub mod screening;
pub mod selfenergy;
pub mod tensor;

pub use error::{QdetError, Result};

/// Hartree to electronvolt.
pub const HARTREE_TO_EV: f64 = 27.211386245988;
