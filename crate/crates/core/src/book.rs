//! Guide chapters, compiled so their snippets run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/sinkers.md")]
pub mod sinkers {}
#[doc = include_str!("../../../book/src/discretization.md")]
pub mod discretization {}
#[doc = include_str!("../../../book/src/schur.md")]
pub mod schur {}
#[doc = include_str!("../../../book/src/multigrid.md")]
pub mod multigrid {}
#[doc = include_str!("../../../book/src/solving.md")]
pub mod solving {}
#[doc = include_str!("../../../book/src/spectra.md")]
pub mod spectra {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
