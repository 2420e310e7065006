//! Numerical workbench for degenerate p-Laplacian Neumann problems on
//! rectangles, weighted Poincaré constants and the weight conditions that
//! produce them.

// parameter checks are written `!(x > a)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod matrix_weight;
pub mod neumann;
pub mod optim;
pub mod poincare;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};
