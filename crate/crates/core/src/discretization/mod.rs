//! Finite-element spaces and assembly for the Stokes operator.

mod assembly;
mod operator;
mod space;

pub use assembly::*;
pub use operator::*;
pub use space::*;
