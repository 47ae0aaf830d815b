pub mod basis;
#[cfg(doctest)]
pub mod book;
pub mod discretization;
pub mod error;
pub mod harness;
pub mod krylov;
pub mod mesh;
pub mod multigrid;
pub mod schur;
pub mod sparse;
pub mod spectrum;
pub mod viscosity;

pub use error::{Error, Result};
