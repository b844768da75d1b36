//! Scan-specific dynamic MRI reconstruction. Similar patches of an initial
//! image are stacked into small tensors, each represented as a Tucker core
//! times factor matrices sampled from shared sine-activated networks, and fit
//! to undersampled multi-coil k-space.
//!
//! Tensors are dense `f64`, mode 0 fastest; complex data carries a trailing
//! real/imag mode.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod losses;
pub mod mri;
pub mod parallel;
pub mod patching;
pub mod tenf;
pub mod tensor;

pub use error::{Error, Result};
