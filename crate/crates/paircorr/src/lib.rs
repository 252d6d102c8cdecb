//! Second-order corrections to mean-field boson dynamics.
//!
//! The crate solves the Hartree equation for a condensate `φ`, the
//! pair-excitation kernel equation for `k`, evaluates the phase
//! corrections `χ₀`, `χ₁` and the error functionals `f`, `g`, and checks
//! everything against an exact truncated Fock-space model on small lattices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod error_norms;
pub mod fock;
pub mod grid;
pub mod hartree;
pub mod kernel;
pub mod pair;
mod par;
pub mod pipeline;
pub mod reduction;
pub mod sampling;

pub use error::{Error, Result};
