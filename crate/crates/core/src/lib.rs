//! Pseudo-spectral laboratory for the creeping-flow Oldroyd-B model.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evolution;
pub mod field;
pub mod grid;
pub mod ic;
pub mod kernels;
pub mod lab;
pub mod mollifier;
pub mod monitor;
pub mod norms;
pub mod runner;
pub mod spectral;
pub mod stokes;

pub use error::{Error, Result};
pub use field::{Field, ScalarField, SymTensorField, TensorField, VectorField};
pub use grid::Grid;
pub use spectral::{forward_transform, inverse_transform, MultiIndex, SpectralField};
