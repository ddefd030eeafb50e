//! Automatic video colorization with a 3D conditional GAN.
//!
//! Frames are converted to CIE Lab; a 3D U-Net predicts the a/b chrominance
//! of short clips from their lightness, overlapping clip estimates are
//! aggregated per frame, and the result is scored with PSNR, raw accuracy
//! and a temporal color-consistency measure.

pub mod cli;
pub mod colorspace;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};

// The guide under book/ is compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/colorspace.md")]
    mod colorspace {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
