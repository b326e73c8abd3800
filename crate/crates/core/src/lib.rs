//! Numerical core for weakly-supervised segmentation priors.
//!
//! Everything here is a pure function of explicit inputs and runs without the
//! standard library: CAM production and tiling, the classification-side
//! objectives with their schedules, the alternating generator/`noc` trainer,
//! hint-guided foreground/background disentangling, seed generation with
//! random-walk refinement, and the evaluation metrics. File formats, run
//! directories and the command line live in the `pnoc` crate.

#![no_std]

extern crate alloc;

pub mod augment;
pub mod c2amh;
pub mod cam;
pub mod error;
pub mod eval;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod refine;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor3;
