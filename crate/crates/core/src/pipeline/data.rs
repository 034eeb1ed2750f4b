//! Training video sources and the synthetic dataset writer.
//!
//! On-disk dataset layout:
//!
//! ```text
//! DIR/videos/video_0000/frame_00000.ppm ...
//! DIR/masks/video_0000/mask_00000.pgm ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::media::{gen_masks, gen_synthetic_video, read_frames, write_frames, write_masks, MaskSpec, VideoTensor};
use crate::numerics::RngStream;

/// Yields training clips at a requested resolution and length.
pub trait DataSource: Sync {
    fn sample(&self, rng: &mut RngStream, height: usize, width: usize, frames: usize) -> Result<VideoTensor>;
}

/// Moving shapes drawn on demand.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSource {
    pub objects: usize,
}

impl DataSource for SyntheticSource {
    fn sample(&self, rng: &mut RngStream, height: usize, width: usize, frames: usize) -> Result<VideoTensor> {
        gen_synthetic_video(rng, height, width, frames, self.objects)
    }
}

/// Videos loaded from a dataset directory. Samples are random temporal
/// crops, resized to the requested resolution when it differs.
#[derive(Debug, Clone)]
pub struct DirSource {
    videos: Vec<VideoTensor>,
}

/// Subdirectories of `dir` in name order, or `dir` itself when it holds
/// frames directly.
pub fn video_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs = Vec::new();
    let mut has_files = false;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            subdirs.push((entry.file_name().to_string_lossy().into_owned(), path));
        } else {
            has_files = true;
        }
    }
    if subdirs.is_empty() && has_files {
        return Ok(vec![(".".into(), dir.to_path_buf())]);
    }
    subdirs.sort();
    Ok(subdirs)
}

impl DirSource {
    pub fn new(videos: Vec<VideoTensor>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::InvalidArgument("dataset holds no videos".into()));
        }
        Ok(DirSource { videos })
    }

    /// Reads `DIR/videos/*` if present, otherwise every video under `DIR`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let root = if dir.join("videos").is_dir() {
            dir.join("videos")
        } else {
            dir.to_path_buf()
        };
        let videos = video_dirs(&root)?
            .into_iter()
            .map(|(_, p)| read_frames(p))
            .collect::<Result<Vec<_>>>()?;
        if videos.is_empty() {
            return Err(Error::format(root, "no videos found"));
        }
        Self::new(videos)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

impl DataSource for DirSource {
    fn sample(&self, rng: &mut RngStream, height: usize, width: usize, frames: usize) -> Result<VideoTensor> {
        let video = &self.videos[rng.below(self.videos.len())];
        if video.frames() < frames {
            return Err(Error::InvalidArgument(format!(
                "dataset video has {} frames, stage needs {frames}",
                video.frames()
            )));
        }
        let start = rng.below(video.frames() - frames + 1);
        let clip = VideoTensor::from_tensor(video.tensor().slice(0, start, start + frames)?)?;
        if (clip.height(), clip.width()) == (height, width) {
            Ok(clip)
        } else {
            clip.resize(height, width)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    pub seed: u64,
}

/// Writes synthetic videos plus one mask sequence per video (stationary for
/// even indices, moving for odd).
pub fn write_dataset(dir: impl AsRef<Path>, spec: &DatasetSpec) -> Result<()> {
    let dir = dir.as_ref();
    if spec.videos == 0 {
        return Err(Error::InvalidArgument("video count must be positive".into()));
    }
    let root = RngStream::new(spec.seed, 0);
    for i in 0..spec.videos {
        let name = format!("video_{i:04}");
        let mut rng = root.child(i as u64);
        let video = gen_synthetic_video(&mut rng, spec.height, spec.width, spec.frames, spec.objects)?;
        let mask_spec = if i % 2 == 0 {
            MaskSpec::stationary()
        } else {
            MaskSpec::moving()
        };
        let mask = gen_masks(&mut rng, spec.height, spec.width, spec.frames, &mask_spec)?;
        write_frames(&video, dir.join("videos").join(&name))?;
        write_masks(&mask, dir.join("masks").join(&name))?;
    }
    Ok(())
}
