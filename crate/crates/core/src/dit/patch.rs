//! 2x2x1 patching of latent grids into token sequences.
//!
//! Token order is temporal-major, then patch row, then patch column:
//! `token = (t * rows + r) * cols + c`. Within a token the patch vector is
//! ordered `(dy, dx, channel)`: `index = (dy * 2 + dx) * channels + channel`.

use crate::codec::Latent;
use crate::dit::config::{PATCH, PATCH_CELLS};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Token grid `(frames, patch rows, patch columns)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TokenGrid {
    pub fn for_latent(frames: usize, height: usize, width: usize) -> Result<Self> {
        if !height.is_multiple_of(PATCH) || !width.is_multiple_of(PATCH) {
            return Err(Error::InvalidArgument(format!(
                "latent height and width must be even, got {height}x{width}"
            )));
        }
        Ok(TokenGrid {
            frames,
            rows: height / PATCH,
            cols: width / PATCH,
        })
    }

    /// `L = w * h * n / 4`.
    pub fn len(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(t, r, c)` coordinate of token `i`.
    pub fn coord(&self, i: usize) -> (usize, usize, usize) {
        (i / (self.rows * self.cols), (i / self.cols) % self.rows, i % self.cols)
    }
}

/// `L x D` tokens with their grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T: Scalar> {
    pub tokens: Tensor<T>,
    pub grid: TokenGrid,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Rearranges a latent into `[L, 4 * channels]` patch vectors.
pub fn patchify<T: Scalar>(latent: &Latent<T>) -> Result<(Tensor<T>, TokenGrid)> {
    let (h, w, n, c) = latent.dims();
    let grid = TokenGrid::for_latent(n, h, w)?;
    let width = PATCH_CELLS * c;
    let src = latent.data();
    let mut out = vec![T::ZERO; grid.len() * width];
    for (tok, row) in out.chunks_exact_mut(width).enumerate() {
        let (t, r, col) = grid.coord(tok);
        for dy in 0..PATCH {
            for dx in 0..PATCH {
                let (y, x) = (r * PATCH + dy, col * PATCH + dx);
                let at = ((t * h + y) * w + x) * c;
                let q = (dy * PATCH + dx) * c;
                row[q..q + c].copy_from_slice(&src[at..at + c]);
            }
        }
    }
    Ok((Tensor::from_vec(&[grid.len(), width], out)?, grid))
}

/// Places the first `channels` entries of each cell's slot back on the grid.
/// Each token row holds four cells of `stride` scalars; `stride > channels`
/// drops the tail of every cell.
pub fn unpatchify<T: Scalar>(tokens: &Tensor<T>, grid: TokenGrid, channels: usize, stride: usize) -> Result<Latent<T>> {
    if tokens.rank() != 2 || tokens.shape()[0] != grid.len() {
        return Err(Error::invalid_shape(
            tokens.shape(),
            format!("expected {} tokens for grid {grid:?}", grid.len()),
        ));
    }
    if tokens.shape()[1] != PATCH_CELLS * stride || channels > stride {
        return Err(Error::invalid_shape(
            tokens.shape(),
            format!("token width must be {} for {channels} channels", PATCH_CELLS * stride),
        ));
    }
    let (h, w) = (grid.rows * PATCH, grid.cols * PATCH);
    let mut out = vec![T::ZERO; grid.frames * h * w * channels];
    for (tok, row) in tokens.data().chunks_exact(PATCH_CELLS * stride).enumerate() {
        let (t, r, col) = grid.coord(tok);
        for dy in 0..PATCH {
            for dx in 0..PATCH {
                let (y, x) = (r * PATCH + dy, col * PATCH + dx);
                let at = ((t * h + y) * w + x) * channels;
                let q = (dy * PATCH + dx) * stride;
                out[at..at + channels].copy_from_slice(&row[q..q + channels]);
            }
        }
    }
    Latent::from_tensor(Tensor::from_vec(&[grid.frames, h, w, channels], out)?)
}

/// Elementwise sum of the three embedded streams.
pub fn fuse_tokens<T: Scalar>(
    noise: &TokenSequence<T>,
    latent: &TokenSequence<T>,
    mask: &TokenSequence<T>,
) -> Result<TokenSequence<T>> {
    if noise.grid != latent.grid || noise.grid != mask.grid {
        return Err(Error::InvalidArgument(format!(
            "token grids differ: {:?}, {:?}, {:?}",
            noise.grid, latent.grid, mask.grid
        )));
    }
    Ok(TokenSequence {
        tokens: noise.tokens.add(&latent.tokens)?.add(&mask.tokens)?,
        grid: noise.grid,
    })
}
