//! Weakly-supervised semantic segmentation from image-level labels.
//!
//! A small convolutional network produces class activation maps; image-level
//! predictions come from global pooling and from importance sampling pixels
//! in proportion to their activation. A feature similarity loss aligns the
//! map contours with colour edges. Everything runs on a self-contained
//! reverse-mode differentiation engine.

pub mod autodiff;
pub mod cam;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
