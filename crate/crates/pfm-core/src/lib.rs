//! Fixed-filter convolution modules and everything needed to study them:
//! a small f64 tensor engine with reverse-mode automatic differentiation,
//! the pre-defined 3x3 filter banks (edge/line, random, translating) with
//! their subset selections, the PFM layer itself, the oriented-dashes toy
//! dataset with its closed-form classifier, model builders for the toy
//! networks and for ResNet18/PFNet18 parameter counting, a deterministic
//! SGD trainer, and numeric checks of the underlying linear-algebra claims.
//!
//! The crate is `no_std`-compatible (the default `std` feature only adds
//! wall-clock timing in the trainer); all I/O lives in the companion
//! `pfm-lab` crate.
//!
//! Convolutions here are cross-correlations (no kernel flip), the usual
//! deep-learning convention. The edge/line bank is closed under negation
//! and its kernels are either symmetric or come in sign pairs, so nothing
//! downstream depends on the choice.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod autodiff;
pub mod dashes;
pub mod error;
pub mod filters;
pub mod linalg;
mod math;
pub mod models;
pub mod pfm;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
