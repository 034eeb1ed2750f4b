//! Frame and tensor file I/O, synthetic videos, and random hole masks.

mod frames;
mod masks;
mod synth;
mod tensor_file;
mod video;

pub use frames::{quantize, read_frames, read_masks, write_frames, write_masks};
pub use masks::{gen_masks, MaskKind, MaskSpec};
pub use synth::{gen_synthetic_video, MIN_SYNTH_SIDE};
pub use tensor_file::{decode_tensor, encode_tensor, load_tensor, save_tensor, TENSOR_MAGIC, TENSOR_VERSION};
pub use video::{apply_mask, composite, MaskTensor, VideoTensor, HOLE_FILL};
