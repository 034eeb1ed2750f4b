//! Text-free diffusion transformer over latent video tokens.

mod checkpoint;
mod config;
mod model;
mod params;
mod patch;
mod rope;
mod timestep;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{param_count, rope_sections, ModelConfig, OutputMode, PATCH, PATCH_CELLS};
pub use model::{block_forward, Dit, DitInput, Modulation, Stream};
pub use params::{BlockParams, DitParams, Linear};
pub use patch::{fuse_tokens, patchify, unpatchify, TokenGrid, TokenSequence};
pub use rope::RopeTable;
pub use timestep::{timestep_frequencies, TIME_SCALE};
