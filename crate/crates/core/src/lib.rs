//! RoI external attention detection head on a small reverse-mode autodiff core.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches files, clocks
//! or threads lives in the companion `roiattn` crate; this crate only computes.
//!
//! Layout:
//!
//! * [`tensor`], [`graph`], [`params`]: dense `f32` tensors, a define-by-run
//!   tape with reverse-mode gradients, parameter storage and SGD.
//! * [`attention`]: external attention over the RoIs of one image with double
//!   normalization, stackable to any depth.
//! * [`posenc`]: coordinate-channel positional encoding fused by a shared 1×1 conv.
//! * [`roi`]: box scaling and RoIAlign crops for the two head branches.
//! * [`head`]: the single (2fc) baseline head and the double head.
//! * [`backbone`], [`detector`], [`scene`], [`boxes`], [`eval`], [`train`]:
//!   the toy end-to-end detection pipeline.
//! * [`reference`], [`gradcheck`]: loop-based `f64` oracles kept independent of
//!   the tape, used by the test suites and the CLI self-test.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod backbone;
pub mod boxes;
pub mod checks;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod layers;
mod kernels;
pub mod params;
pub mod posenc;
pub mod reference;
pub mod roi;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Sgd};
pub use tensor::Tensor;

/// Number of object categories in the synthetic dataset.
pub const NUM_CLASSES: usize = 4;

/// Class index used for background proposals.
pub const BACKGROUND: usize = NUM_CLASSES;
