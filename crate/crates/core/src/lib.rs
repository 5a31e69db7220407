//! Poisson image denoising with a Fields-of-Experts prior.
//!
//! The crate covers the whole chain: peak scaling and Poisson sampling,
//! the Anscombe transform and its unbiased inverse, the FoE energy, an
//! inertial proximal solver, peak-adaptive denoisers, bilevel training of
//! the filters and image quality metrics.

pub mod basis;
pub mod error;
pub mod foe;
pub mod image;
pub mod lambda_table;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod solver;
pub mod trainer;
pub mod vst;

pub use error::{Error, Result};
pub use image::{BoundaryRule, Image, Kernel};
