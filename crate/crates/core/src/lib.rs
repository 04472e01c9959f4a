//! Fine-grained intrinsic image decomposition.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; the `std` feature only switches the matrix-multiply kernels to
//! runtime CPU feature detection. File formats, the training driver, and the
//! command line live in the companion `shadingnet-lab` crate.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`], [`tape`], [`ops`], [`param`], [`optim`], [`init`]: a small
//!   dense-tensor engine with reverse-mode automatic differentiation covering
//!   exactly the operators the network needs.
//! - [`physics`]: image formation with unified and composite shading.
//! - [`scene`]: a procedural ray caster producing composites with dense
//!   reflectance, direct shading, ambient and shadow ground truth.
//! - [`metrics`]: MSE, SMSE, LMSE, DSSIM and WHDR.
//! - [`loss`]: the training objective.
//! - [`net`]: the ShadingNet encoder, gated decoders, fusion and refinement.
//! - [`gradcheck`]: finite-difference verification of every operator and loss.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod map;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod param;
pub mod physics;
pub mod rng;
pub mod scene;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use map::Map;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
