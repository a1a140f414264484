//! k-symplectic optimal control toolkit.
//!
//! Mechanizes the geometric machinery for optimal control problems governed
//! by first-order partial differential equations: symbolic extension of
//! control systems, derivation of the k Pontryagin Hamiltonians and their
//! Hamilton/costate equations, the unified Skinner-Rusk constraint algorithm
//! for implicit problems, numerical integration of integral sections over a
//! coordinate box, and verification of candidate solutions against the
//! k-symplectic maximum principle via needle variations and perturbation-cone
//! separation.

// indexed loops over parallel numeric arrays are the clearest form here
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod control;
pub mod expr;
pub mod grid;
pub mod hamiltonian;
pub mod integrate;
pub mod molecule;
pub mod names;
pub mod pmp;
pub mod skinner_rusk;

pub use expr::{parse, Bindings, Expr, ZeroProbe};
