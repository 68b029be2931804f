//! A desk-scale flow-matching lab for phase-aware slow/fast low-rank adapters.
//!
//! A many-step teacher velocity field is trained on synthetic 2-D data. Two
//! adapters are then distilled from a handful of samples (as few as one): a
//! slow expert for the high-noise start of the trajectory and a fast expert
//! for the low-noise end. Few-step Euler sampling runs the slow steps first,
//! then the fast ones, and the [`ablation`] harness compares that arrangement
//! with uniform and single-adapter alternatives.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod lora;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod schedule;
pub mod svg;
pub mod tensor;
pub mod training;

pub use error::{Error, LoadError, Result};
pub use tensor::Tensor;
