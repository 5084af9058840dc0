//! Numerical laboratory for random walks in doubly stochastic random
//! environments on periodic lattices.
//!
//! The crate builds divergence-free jump-rate fields from stream tensors,
//! solves the harmonic-coordinate (corrector) equation, simulates quenched
//! continuous-time walks, evolves exact heat kernels by uniformization, and
//! computes the entropy/moment/CLT diagnostics that check the underlying
//! theory at desk scale.

pub mod clt;
pub mod corrector;
pub mod dense;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod fft;
pub mod fields;
pub mod geometry;
pub mod heat_kernel;
pub mod io;
pub mod nash;
pub mod operators;
pub mod rng;
pub mod solver;
pub mod stream;
pub mod sublinearity;

pub use corrector::{CorrectorSolution, CorrectorTarget, Sigma2};
pub use environment::{EnvironmentSpec, RescalePolicy, SkewFlow, TorusEnvironment};
pub use error::CoreError;
pub use fields::{FieldValue, GradientField, ScalarField};
pub use geometry::{Direction, TorusGeometry};
pub use heat_kernel::HeatKernel;
pub use stream::{FieldLaw, StreamTensor};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
