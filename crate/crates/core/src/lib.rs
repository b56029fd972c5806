pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Head, UTimeConfig, UTimeModel};
pub use tensor::{Mode, Tensor};
