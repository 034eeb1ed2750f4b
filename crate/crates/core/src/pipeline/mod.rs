//! Training, inpainting and evaluation built from the lower-level modules.

mod config;
mod data;
mod inpaint;
mod metrics;
mod optim;
mod selftest;
mod train;

pub use config::{Stage, TrainConfig};
pub use data::{video_dirs, write_dataset, DataSource, DatasetSpec, DirSource, SyntheticSource};
pub use inpaint::{inpaint, inpaint_dirs, InpaintOptions, DEFAULT_WINDOW};
pub use metrics::{evaluate, masked_psnr, psnr, ssim, EvalReport, VideoScore, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use optim::AdamW;
pub use selftest::{run_selftest, CheckResult};
pub use train::{prepare_sample, smoothed_loss, train, TrainEvent, TrainOutcome, TrainSample};
