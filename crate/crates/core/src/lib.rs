//! Face-morph generation and FD-GAN de-morphing.
//!
//! The crate covers the full loop: synthesizing a face corpus, building
//! morphing-attack triplets, training the symmetric dual generator and the
//! pair discriminator, restoring the accomplice face from a morph plus the
//! criminal's live image, and scoring restorations with a threshold-calibrated
//! matcher.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod landmarks;
pub mod losses;
pub mod morph;
pub mod net;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::RasterImage;
pub use landmarks::LandmarkSet;
