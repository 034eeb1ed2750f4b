//! Video inpainting with a text-free diffusion transformer.
//!
//! Masked video is compressed to latents by [`codec`], denoised by the
//! transformer in [`dit`] under the flow-matching objective in [`flow`], and
//! extended to arbitrary lengths by the sliding-window fusion in
//! [`multidiffusion`]. [`pipeline`] wires these into training, inference and
//! evaluation.

pub mod codec;
pub mod dit;
mod error;
pub mod flow;
pub mod media;
pub mod multidiffusion;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
