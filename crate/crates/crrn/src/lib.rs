//! Convolutional recurrent reconstructive network (CRRN) for spatiotemporal
//! anomaly detection in solder paste inspection (SPI) data, together with a
//! synthetic SPI data generator, a per-group statistical baseline, and an
//! evaluation harness.
//!
//! The numeric core is generic over the scalar type: f64 for oracles and
//! gradient checks, f32 where training speed matters.

pub mod attention;
pub mod cells;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Dims, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
