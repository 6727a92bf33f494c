//! Task-based image quality: simulation of detection-estimation tasks,
//! ideal and learned observers, and EROC analysis.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod eroc;
pub mod error;
pub mod experiment;
pub mod image;
mod linalg;
pub mod mcmc;
pub mod nn;
pub mod observers;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
pub use image::Image;
