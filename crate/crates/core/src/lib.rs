//! Rovibrational levels of the hydrogen molecular ion and their electric-quadrupole
//! transition rates, from a Lagrange-mesh discretization in perimetric coordinates.

pub mod cli;
pub mod coordinates;
pub mod eigensolver;
pub mod error;
pub mod hamiltonian;
pub mod laguerre_mesh;
pub mod transitions;

pub use error::{Error, Result};
