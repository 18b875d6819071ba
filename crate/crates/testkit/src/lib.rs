//! Test-only oracles: literal `f64` reference kernels, finite differences,
//! and a per-layer gradient-check suite run against the autodiff tape.

pub mod gradcheck;
pub mod reference;

pub use reference::*;
