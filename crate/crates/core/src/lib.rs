//! Parallel-in-time neural twins.
//!
//! Generative sliding-window reconstruction of chaotic system states from
//! sparse probe measurements, an autoregressive baseline, and the
//! diagnostics used to compare the two.
//!
//! Every numerical type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! pipeline and the on-disk formats use.

pub mod dataio;
pub mod dynsys;
pub mod error;
pub mod evalkit;
pub mod generative;
pub mod scalar;
pub mod sensing;
pub mod tensor;
pub mod twin;

pub use error::{PaintError, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type ParamStore = tensor::ParamStore<f64>;
pub type AdamWState = tensor::AdamWState<f64>;
pub type Field2D = dynsys::Field2D<f64>;
pub type Trajectory = dynsys::Trajectory<f64>;
pub type StateTrajectory = dynsys::Trajectory<f64, Vec<f64>>;
