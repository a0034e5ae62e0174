//! Self-supervised monocular depth estimation from image sequences.
//!
//! A depth network and a weight-shared pose network are trained purely from
//! photometric view-synthesis: the reference image of a frame triplet is
//! reconstructed from its neighbours using predicted depth and relative pose,
//! and the reconstruction error is the training signal. No ground-truth depth
//! is used for training; ground truth only enters the evaluation metrics and
//! the synthetic-scene oracle.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod img;
pub mod losses;
pub mod networks;
pub mod synthcam;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
