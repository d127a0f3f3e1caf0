//! Pseudospectral simulation and property checks for the stochastic
//! incompressible Navier-Stokes equations in critical Besov spaces on a
//! periodic box.

pub mod error;
pub mod experiment;
pub mod fft;
pub mod flow;
pub mod field;
pub mod field_ops;
pub mod grid;
pub mod lp;
pub mod rng;
pub mod solver;
pub mod stochastic;

pub use error::{Error, Result};
pub use field::SpectralField;
pub use grid::GridSpec;
pub use lp::{BesovParams, DyadicPartition};
