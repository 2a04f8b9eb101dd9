//! Prior adaptation and affine calibration for the class posteriors of a
//! black-box classifier, plus the evaluation protocol used to compare them.

pub mod adaptation;
pub mod calibration;
pub mod error;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod scores;
pub mod synthgen;

pub use error::{Error, Result};
