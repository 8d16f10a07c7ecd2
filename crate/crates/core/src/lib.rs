//! Finite-blocklength rate-distortion limits for piecewise homogeneous
//! Gaussian random fields on finite lattices.

pub mod error;
pub mod fft;
pub mod field;
pub mod numeric;
pub mod rng;
pub mod distortion;
pub mod waterfill;
pub mod bounds;
pub mod sampler;
pub mod diagnostics;
pub mod tiling;
pub mod io;

pub use error::{Error, Result};
