//! Files, datasets and the training driver around `shadingnet-core`.
//!
//! - [`f32map`] and [`checkpoint`]: the binary formats.
//! - [`dataset`]: synthetic dataset generation and loading.
//! - [`train`], [`eval`], [`decompose`], [`compare`]: the operations behind
//!   the `shadingnet` command line.

mod bytes;
pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod dataset;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod f32map;
pub mod imageio;
pub mod report;
pub mod train;

pub use config::RunConfig;
pub use error::{FormatError, LabError, Result};
