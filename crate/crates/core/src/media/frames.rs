//! Netpbm frame directories: `frame_%05d.ppm` (P6) for video and
//! `mask_%05d.pgm` (P5) for masks, both 8-bit.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::media::video::check_frame_count;
use crate::media::{MaskTensor, VideoTensor};
use crate::numerics::Tensor;

const FRAME_PREFIX: &str = "frame_";
const FRAME_EXT: &str = "ppm";
const MASK_PREFIX: &str = "mask_";
const MASK_EXT: &str = "pgm";

/// Round-half-up quantization of a `[0, 1]` value to 8 bits.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn frame_name(prefix: &str, ext: &str, index: usize) -> String {
    format!("{prefix}{index:05}.{ext}")
}

/// Sorted, contiguous-from-zero list of numbered files in `dir`.
fn numbered_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(stem) = name
            .strip_prefix(prefix)
            .and_then(|s| s.strip_suffix(ext))
            .and_then(|s| s.strip_suffix('.'))
        else {
            continue;
        };
        if stem.len() == 5 && stem.bytes().all(|b| b.is_ascii_digit()) {
            indices.push(stem.parse::<usize>().expect("five digits"));
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::format(dir, format!("no {prefix}NNNNN.{ext} files")));
    }
    for (expected, &found) in indices.iter().enumerate() {
        if expected != found {
            return Err(Error::format(
                dir,
                format!("missing {}", frame_name(prefix, ext, expected)),
            ));
        }
    }
    check_frame_count(indices.len()).map_err(|e| Error::format(dir, e.to_string()))?;
    Ok(indices
        .into_iter()
        .map(|i| dir.join(frame_name(prefix, ext, i)))
        .collect())
}

struct Netpbm {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Parses a binary P5/P6 file with maxval 255.
fn parse_netpbm(path: &Path, bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Netpbm> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            path,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments between header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported (need 255)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "malformed header"));
    }
    pos += 1;
    let need = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::format(
            path,
            format!("truncated pixel data: {} of {need} bytes", payload.len()),
        ));
    }
    Ok(Netpbm {
        width,
        height,
        pixels: payload[..need].to_vec(),
    })
}

fn read_dir_images(
    dir: &Path,
    prefix: &str,
    ext: &str,
    magic: &[u8; 2],
    channels: usize,
) -> Result<(usize, usize, usize, Vec<u8>)> {
    let paths = numbered_files(dir, prefix, ext)?;
    let mut dims = None;
    let mut all = Vec::new();
    for path in &paths {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = parse_netpbm(path, &bytes, magic, channels)?;
        match dims {
            None => dims = Some((img.height, img.width)),
            Some(d) if d != (img.height, img.width) => {
                return Err(Error::format(path, "frame size differs from first frame"));
            }
            _ => {}
        }
        all.extend_from_slice(&img.pixels);
    }
    let (h, w) = dims.expect("at least one frame");
    Ok((paths.len(), h, w, all))
}

pub fn read_frames(dir: impl AsRef<Path>) -> Result<VideoTensor> {
    let (n, h, w, bytes) = read_dir_images(dir.as_ref(), FRAME_PREFIX, FRAME_EXT, b"P6", 3)?;
    let data = bytes.into_iter().map(|b| b as f32 / 255.0).collect();
    VideoTensor::from_tensor(Tensor::from_vec(&[n, h, w, 3], data)?)
}

pub fn read_masks(dir: impl AsRef<Path>) -> Result<MaskTensor> {
    let (n, h, w, bytes) = read_dir_images(dir.as_ref(), MASK_PREFIX, MASK_EXT, b"P5", 1)?;
    let data = bytes.into_iter().map(|b| if b >= 128 { 1.0 } else { 0.0 }).collect();
    MaskTensor::from_tensor(Tensor::from_vec(&[n, h, w, 1], data)?)
}

fn write_image(path: &Path, magic: &str, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_frames(video: &VideoTensor, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..video.frames() {
        let pixels: Vec<u8> = video.frame(t).iter().map(|&v| quantize(v)).collect();
        let path = dir.join(frame_name(FRAME_PREFIX, FRAME_EXT, t));
        write_image(&path, "P6", video.width(), video.height(), &pixels)?;
    }
    Ok(())
}

pub fn write_masks(mask: &MaskTensor, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..mask.frames() {
        let pixels: Vec<u8> = mask.frame(t).iter().map(|&v| if v != 0.0 { 255 } else { 0 }).collect();
        let path = dir.join(frame_name(MASK_PREFIX, MASK_EXT, t));
        write_image(&path, "P5", mask.width(), mask.height(), &pixels)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn roundtrip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(11, 0);
        let v = VideoTensor::from_fn(5, 6, 7, |_, _, _| {
            [rng.uniform() as f32, rng.uniform() as f32, rng.uniform() as f32]
        })
        .unwrap();
        write_frames(&v, dir.path()).unwrap();
        let back = read_frames(dir.path()).unwrap();
        assert_eq!(back.tensor().shape(), v.tensor().shape());
        assert!(back.tensor().max_abs_diff(v.tensor()).unwrap() <= 1.0 / 255.0);
    }

    #[test]
    fn black_frames_read_as_zero() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(&VideoTensor::constant(1, 4, 4, [0.0; 3]).unwrap(), dir.path()).unwrap();
        let back = read_frames(dir.path()).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn wrong_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let v = VideoTensor::constant(65, 2, 2, [0.2; 3]).unwrap();
        write_frames(&v, dir.path()).unwrap();
        fs::remove_file(dir.path().join("frame_00064.ppm")).unwrap();
        let err = read_frames(dir.path()).unwrap_err().to_string();
        assert!(err.contains("4k+1"), "{err}");
    }

    #[test]
    fn gap_in_indices_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(&VideoTensor::constant(5, 2, 2, [0.2; 3]).unwrap(), dir.path()).unwrap();
        fs::rename(dir.path().join("frame_00002.ppm"), dir.path().join("frame_00005.ppm")).unwrap();
        let err = read_frames(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame_00002.ppm"), "{err}");
    }

    #[test]
    fn malformed_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("frame_00000.ppm"), b"P3\n2 2\n255\n").unwrap();
        assert!(read_frames(dir.path()).is_err());
        fs::write(dir.path().join("frame_00000.ppm"), b"P6\n2 x\n255\n").unwrap();
        assert!(read_frames(dir.path()).is_err());
        fs::write(dir.path().join("frame_00000.ppm"), b"P6\n2 2\n255\n\x00\x01").unwrap();
        let err = read_frames(dir.path()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("frame_00000.ppm"),
            b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80",
        )
        .unwrap();
        let v = read_frames(dir.path()).unwrap();
        assert_eq!(v.pixel(0, 0, 0), [1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn masks_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = MaskTensor::from_fn(5, 4, 6, |t, y, x| (t + y * x) % 2 == 0).unwrap();
        write_masks(&m, dir.path()).unwrap();
        assert_eq!(read_masks(dir.path()).unwrap(), m);
    }
}
