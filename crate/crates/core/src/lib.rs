//! Sketch-conditioned diffusion synthesis of layered (OCT-like) images.
//!
//! The pipeline: fit boundary statistics from labelled masks, sample and
//! render layer sketches, push them through a denoising-diffusion model from
//! an intermediate timestep, relabel the synthetic images with a teacher
//! segmenter, and measure what the synthetic data buys a student segmenter.

pub mod data;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod seed;
pub mod segmentation;
pub mod sketch;
pub mod tensor;
pub mod unet;

pub use data::{DatasetManifest, Image, LabelMask};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
