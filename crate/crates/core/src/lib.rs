//! Cross convolution super-resolution: a structure-preserving SR network built on
//! a small NCHW tensor library with reverse-mode differentiation, plus the
//! imaging, metric, benchmark-selection and training machinery around it.

pub mod benchmark;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
