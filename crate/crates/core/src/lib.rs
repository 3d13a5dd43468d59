//! Balanced-error surrogate losses, synthetic data, a small SGD trainer and
//! numeric checks of the surrogate consistency bounds.

pub mod datagen;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
