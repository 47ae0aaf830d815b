//! Hybrid p/h multigrid with Chebyshev–Jacobi smoothing.

mod hierarchy;
mod poisson;
mod smoother;
mod transfer;

pub use hierarchy::*;
pub use poisson::*;
pub use smoother::*;
pub use transfer::*;
