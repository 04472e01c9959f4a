//! The operator set of the tensor engine.
//!
//! Each submodule adds methods to [`Tape`](crate::Tape) and holds the record
//! type its backward rule replays.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod resample;

mod gemm;

pub use activation::Activation;
pub use conv::Conv2dConfig;
pub use norm::{BatchNormConfig, Mode, RunningStats};
