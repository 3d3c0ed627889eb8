//! Synthetic IVUS phantoms, conditional-GAN segmentation networks, training,
//! contour extraction and evaluation metrics.

pub mod augment;
pub mod dataset;
mod error;
pub mod geometry;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod phantom;
pub mod segment;
pub mod train;

pub use error::{CoreError, Result};
