//! Numerical laboratory for phase-space analysis on a periodic grid:
//! point-dependent metrics with their slow-variation/temperance axioms,
//! Weyl quantization and the Moyal product, Sobolev norms built from
//! confined partitions, Fredholm/index diagnostics, and Neumann-series
//! symbol inversion.
//!
//! Everything operates at desk scale: one space dimension, `N x N`
//! operator matrices with `N` a power of two, dense linear algebra.

pub mod error;
pub mod exec;
pub mod fredholm;
pub mod grid;
pub mod inversion;
pub mod linalg;
pub mod metric;
pub mod poly;
pub mod quantize;
pub mod symbol;

pub use error::{Error, Result};
pub use grid::{PhaseGrid, SymbolGrid};
pub use quantize::OperatorMatrix;
