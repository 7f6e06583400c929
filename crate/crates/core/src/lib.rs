//! Desk-scale probabilistic segmentation with normalizing-flow posteriors.
//!
//! The crate provides a small reverse-mode autodiff engine, diagonal
//! Gaussians, planar/radial normalizing flows with analytic log-det
//! Jacobians, a probabilistic encoder-decoder segmentation model trained on
//! the flow-corrected ELBO, the evaluation metrics (generalized energy
//! distance, Hungarian-matched and average IoU), and a deterministic
//! synthetic multi-annotator dataset generator.

pub mod autodiff;
pub mod error;
pub mod flows;
pub mod gaussian;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod synthdata;

pub use error::{Error, Result};
