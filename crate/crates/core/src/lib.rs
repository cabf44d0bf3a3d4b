//! Dense-scanning pyramid classifier for gigapixel slide analysis.
//!
//! The crate is `no_std` + `alloc`: it holds every algorithm (tensor math,
//! the detector and decoder, losses, scan geometry, preprocessing, staging and
//! metrics) and the byte-level codecs, but performs no IO. The `densescan`
//! crate layers files, configuration and the command line on top.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codec;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod params;
pub mod pyramid;
pub mod rng;
pub mod staging;
pub mod tensor;
pub mod train;
pub mod wsi;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
