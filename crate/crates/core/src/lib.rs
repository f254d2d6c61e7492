//! Stochastic gradient descent on planar shapes for interface
//! identification problems governed by a two-material diffusion equation.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod elasticity;
pub mod error;
pub mod fem;
pub mod field;
pub mod linalg;
pub mod mesh;
pub mod optimizer;
pub mod plot;
pub mod shape_calculus;
pub mod stochastic;

pub use error::{Error, Result};
pub use field::{ScalarField, VectorField};
pub use mesh::Mesh;
