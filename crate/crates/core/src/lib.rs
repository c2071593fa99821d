//! Training-free refinement of coarse segmentation masks.
//!
//! A coarse class map is binarized and injected into a denoiser's attention,
//! the image is reconstructed in one denoising step, and the class map is
//! updated by mixing each uncertain pixel with the probability at its dense
//! feature match in the original image.

pub mod correspondence;
pub mod diffusion;
mod error;
pub mod evaluation;
pub mod injection;
pub mod pipeline;
pub mod png_io;
pub mod prompt;
pub mod recorded;
pub mod resample;
pub mod tensor_file;
pub mod types;

pub use error::{Error, Result};
