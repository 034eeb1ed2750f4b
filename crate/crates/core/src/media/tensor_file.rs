//! Binary tensor container.
//!
//! | bytes      | content                                  |
//! |------------|------------------------------------------|
//! | 4          | magic `DTPT`                             |
//! | 4          | version, u32 LE (= 1)                    |
//! | 4          | dtype, u32 LE (0 = f32, 1 = f64)         |
//! | 4          | rank, u32 LE                             |
//! | 8 x rank   | dims, u64 LE each                        |
//! | elem x len | row-major little-endian scalars          |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DType, Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"DTPT";
pub const TENSOR_VERSION: u32 = 1;

pub fn encode_tensor<T: Scalar>(tensor: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(T::DTYPE as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(tensor.len() * T::DTYPE.size());
    for &v in tensor.data() {
        v.write_le(out);
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(
                self.origin,
                format!("truncated {what} at byte {}", self.pos),
            ));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes one tensor starting at `*pos`, advancing it past the payload.
/// `origin` only labels errors.
pub fn decode_tensor<T: Scalar>(bytes: &[u8], pos: &mut usize, origin: &Path) -> Result<Tensor<T>> {
    let mut cur = Cursor {
        bytes,
        pos: *pos,
        origin,
    };
    if bytes.len() <= *pos {
        return Err(Error::format(origin, "empty tensor data"));
    }
    let magic = cur.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::format(origin, format!("bad magic {magic:?}, expected \"DTPT\"")));
    }
    let version = cur.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let code = cur.u32("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::format(origin, format!("unknown dtype code {code}")))?;
    if dtype != T::DTYPE {
        return Err(Error::format(
            origin,
            format!("dtype mismatch: file holds {dtype:?}, requested {:?}", T::DTYPE),
        ));
    }
    let rank = cur.u32("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = cur.u64("dims")?;
        shape.push(usize::try_from(d).map_err(|_| Error::format(origin, "dimension too large"))?);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(origin, "element count overflows"))?;
    let width = dtype.size();
    let payload = cur.take(len.saturating_mul(width), "payload")?;
    let data = payload.chunks_exact(width).map(T::read_le).collect();
    *pos = cur.pos;
    Tensor::from_vec(&shape, data).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save_tensor<T: Scalar>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    encode_tensor(tensor, &mut out);
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    decode_tensor(&bytes, &mut pos, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_gaussian, RngStream};
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_pinned() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let mut bytes = Vec::new();
        encode_tensor(&t, &mut bytes);
        let mut expected = b"DTPT".to_vec();
        expected.extend([1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupted_magic_names_expected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        save_tensor(&Tensor::<f32>::zeros(&[3]).unwrap(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        let err = load_tensor::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("DTPT"), "{err}");
    }

    #[test]
    fn empty_and_truncated_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        fs::write(&path, b"").unwrap();
        assert!(load_tensor::<f32>(&path).is_err());
        save_tensor(&Tensor::<f64>::zeros(&[4, 4]).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_tensor::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        save_tensor(&Tensor::<f64>::zeros(&[2]).unwrap(), &path).unwrap();
        let err = load_tensor::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("dtype mismatch"), "{err}");
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(dims in proptest::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let t: Tensor<f64> = sample_gaussian(&mut RngStream::new(seed, 0), &dims).unwrap();
            let mut bytes = Vec::new();
            encode_tensor(&t, &mut bytes);
            let mut pos = 0;
            let back: Tensor<f64> = decode_tensor(&bytes, &mut pos, Path::new("mem")).unwrap();
            prop_assert_eq!(pos, bytes.len());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.shape(), t.shape());
        }
    }
}
