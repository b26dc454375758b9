//! Desk-scale laboratory for studying density control and deformation
//! coherence in dynamic Gaussian splatting.
//!
//! The crate trains small synthetic dynamic scenes end to end — a 2D world
//! rendered to 1D images by a differentiable splatting compositor — so that
//! training-dynamics experiments (densification ablations, deformation
//! smoothness priors, overfitting diagnostics, paired statistics) run in
//! seconds instead of GPU-hours.
//!
//! Start with the runnable examples (`cargo run --release --example ...`),
//! one per capability; the `splatlab` binary wraps the same entry points in a
//! small CLI (`train`, `suite`, `diagnose`, `stats`, `scene`).

pub mod adc;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod model;
pub mod regularizers;
pub mod renderer;
pub mod scenes;
pub mod stats;

pub use error::{Error, Result};
