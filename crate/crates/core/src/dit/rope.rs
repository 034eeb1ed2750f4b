//! Three-axis rotary position embedding.
//!
//! Each head's dimensions are split into contiguous (time, row, column)
//! sections; each section rotates consecutive pairs `(2i, 2i + 1)` by
//! `coord * base^(-2i / section)` using that axis's token coordinate.

use crate::dit::config::rope_sections;
use crate::dit::patch::TokenGrid;
use crate::error::Result;
use crate::numerics::Scalar;

#[derive(Debug, Clone)]
pub struct RopeTable<T: Scalar> {
    /// `[L, head_dim / 2]`
    cos: Vec<T>,
    sin: Vec<T>,
    pairs: usize,
}

impl<T: Scalar> RopeTable<T> {
    /// Table for explicit `(t, r, c)` coordinates, one per token.
    pub fn from_coords(coords: &[(f64, f64, f64)], head_dim: usize, base: f64) -> Result<Self> {
        let sections = rope_sections(head_dim)?;
        let pairs = head_dim / 2;
        // Per-pair (axis, inverse frequency).
        let mut freqs = Vec::with_capacity(pairs);
        for (axis, &len) in sections.iter().enumerate() {
            for i in 0..len / 2 {
                freqs.push((axis, base.powf(-2.0 * i as f64 / len as f64)));
            }
        }
        let mut cos = Vec::with_capacity(coords.len() * pairs);
        let mut sin = Vec::with_capacity(coords.len() * pairs);
        for &(t, r, c) in coords {
            for &(axis, f) in &freqs {
                let pos = [t, r, c][axis];
                let angle = pos * f;
                cos.push(T::from_f64(angle.cos()));
                sin.push(T::from_f64(angle.sin()));
            }
        }
        Ok(RopeTable { cos, sin, pairs })
    }

    pub fn for_grid(grid: TokenGrid, head_dim: usize, base: f64) -> Result<Self> {
        let coords: Vec<_> = (0..grid.len())
            .map(|i| {
                let (t, r, c) = grid.coord(i);
                (t as f64, r as f64, c as f64)
            })
            .collect();
        Self::from_coords(&coords, head_dim, base)
    }

    pub fn len(&self) -> usize {
        self.cos.len() / self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.cos.is_empty()
    }

    pub fn cos(&self) -> &[T] {
        &self.cos
    }

    pub fn sin(&self) -> &[T] {
        &self.sin
    }

    /// Rotates `x` (`[L, head_dim]`) in place.
    pub fn apply(&self, x: &mut [T]) {
        self.rotate(x, false);
    }

    /// Applies the inverse (transpose) rotation, which is the backward pass.
    pub fn apply_transpose(&self, x: &mut [T]) {
        self.rotate(x, true);
    }

    fn rotate(&self, x: &mut [T], inverse: bool) {
        let hd = 2 * self.pairs;
        for (tok, row) in x.chunks_exact_mut(hd).enumerate() {
            let cs = &self.cos[tok * self.pairs..(tok + 1) * self.pairs];
            let sn = &self.sin[tok * self.pairs..(tok + 1) * self.pairs];
            for (p, pair) in row.chunks_exact_mut(2).enumerate() {
                let (a, b) = (pair[0], pair[1]);
                let (c, s) = (cs[p], if inverse { -sn[p] } else { sn[p] });
                pair[0] = a * c - b * s;
                pair[1] = a * s + b * c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_identity() {
        let rope = RopeTable::<f64>::from_coords(&[(0.0, 0.0, 0.0)], 24, 10_000.0).unwrap();
        assert!(rope.cos().iter().all(|&c| c == 1.0));
        assert!(rope.sin().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn transpose_undoes_rotation() {
        let grid = TokenGrid {
            frames: 2,
            rows: 2,
            cols: 3,
        };
        let rope = RopeTable::<f64>::for_grid(grid, 8, 10_000.0).unwrap();
        let orig: Vec<f64> = (0..grid.len() * 8).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = orig.clone();
        rope.apply(&mut x);
        assert_ne!(x, orig);
        rope.apply_transpose(&mut x);
        assert!(x.iter().zip(&orig).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn axes_map_to_their_sections() {
        // head_dim 8 -> sections [4, 2, 2]: pairs 0,1 time; 2 row; 3 col.
        let rope = RopeTable::<f64>::from_coords(&[(0.0, 1.0, 0.0)], 8, 10_000.0).unwrap();
        assert_eq!(&rope.sin()[..2], &[0.0, 0.0]);
        assert!((rope.sin()[2] - 1f64.sin()).abs() < 1e-15);
        assert_eq!(rope.sin()[3], 0.0);
    }
}
