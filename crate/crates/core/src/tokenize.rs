//! Patch embedding and 2x2 patch merging into per-stage token grids.

use crate::error::{Error, Result};
use crate::event::VoxelGrid;
use crate::nn::Linear;

/// Dense `channels x height x width` input tensor (image planes or voxel bins).
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

impl From<&VoxelGrid> for Planes {
    fn from(v: &VoxelGrid) -> Self {
        Self {
            channels: v.bins,
            height: v.height,
            width: v.width,
            data: v.values.clone(),
        }
    }
}

/// Row-major grid of `hs x ws` tokens with `channels` features each.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub hs: usize,
    pub ws: usize,
    pub channels: usize,
    /// Downsampling rate relative to the input resolution.
    pub stride: usize,
    pub features: Vec<f64>,
}

impl TokenGrid {
    pub fn zeros(hs: usize, ws: usize, channels: usize, stride: usize) -> Self {
        Self {
            hs,
            ws,
            channels,
            stride,
            features: vec![0.0; hs * ws * channels],
        }
    }

    pub fn from_features(hs: usize, ws: usize, channels: usize, stride: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != hs * ws * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} features for a {hs}x{ws}x{channels} grid",
                features.len()
            )));
        }
        Ok(Self {
            hs,
            ws,
            channels,
            stride,
            features,
        })
    }

    pub fn token_count(&self) -> usize {
        self.hs * self.ws
    }

    #[inline]
    pub fn token(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn token_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &TokenGrid) -> bool {
        self.hs == other.hs && self.ws == other.ws && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &TokenGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.hs, self.ws, self.channels, other.hs, other.ws, other.channels
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().all(|v| v.is_finite())
    }

    /// Raw little-endian dump: `u16 hs, u16 ws, u16 channels, u16 stride`
    /// followed by the features as f32, token-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.features.len());
        for d in [self.hs, self.ws, self.channels, self.stride] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        for v in &self.features {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::parse("offset 0", "token grid header truncated"));
        }
        let dim = |i: usize| u16::from_le_bytes([bytes[2 * i], bytes[2 * i + 1]]) as usize;
        let (hs, ws, channels, stride) = (dim(0), dim(1), dim(2), dim(3));
        let n = hs * ws * channels;
        if bytes.len() != 8 + 4 * n {
            return Err(Error::parse("offset 8", "token grid payload length mismatch"));
        }
        let features = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_features(hs, ws, channels, stride, features)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    /// 1-based.
    pub stage_index: usize,
    pub stride: usize,
    pub channels: usize,
    pub block_count: usize,
}

/// Default strides: patch 4 followed by three 2x merges.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Builds the four stage configs, checking the stride progression.
pub fn stage_configs(channels: [usize; 4], blocks: [usize; 4]) -> Vec<StageConfig> {
    (0..4)
        .map(|s| StageConfig {
            stage_index: s + 1,
            stride: STAGE_STRIDES[s],
            channels: channels[s],
            block_count: blocks[s],
        })
        .collect()
}

/// Non-overlapping `patch x patch` embedding. Each patch is flattened in
/// `(channel, row, column)` order and projected by `proj`.
pub fn patch_embed(input: &Planes, patch: usize, proj: &Linear) -> Result<TokenGrid> {
    if patch == 0 || !input.height.is_multiple_of(patch) || !input.width.is_multiple_of(patch) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} input not divisible by patch {patch}",
            input.height, input.width
        )));
    }
    let flat = input.channels * patch * patch;
    if proj.in_dim != flat {
        return Err(Error::ShapeMismatch(format!(
            "projection expects {} inputs, patch has {flat}",
            proj.in_dim
        )));
    }
    let (hs, ws) = (input.height / patch, input.width / patch);
    let mut grid = TokenGrid::zeros(hs, ws, proj.out_dim, patch);
    let mut buf = vec![0.0; flat];
    for i in 0..hs {
        for j in 0..ws {
            let mut k = 0;
            for c in 0..input.channels {
                for py in 0..patch {
                    let row = (c * input.height + i * patch + py) * input.width + j * patch;
                    buf[k..k + patch].copy_from_slice(&input.data[row..row + patch]);
                    k += patch;
                }
            }
            proj.forward_into(&buf, grid.token_mut(i * ws + j));
        }
    }
    Ok(grid)
}

/// 2x2 merge: the four neighbours are concatenated in row-major order
/// `(0,0), (0,1), (1,0), (1,1)` and projected by `proj` (4C -> C').
pub fn patch_merge(grid: &TokenGrid, proj: &Linear) -> Result<TokenGrid> {
    if !grid.hs.is_multiple_of(2) || !grid.ws.is_multiple_of(2) {
        return Err(Error::ShapeMismatch(format!(
            "cannot merge odd {}x{} grid",
            grid.hs, grid.ws
        )));
    }
    let c = grid.channels;
    if proj.in_dim != 4 * c {
        return Err(Error::ShapeMismatch(format!(
            "merge projection expects {} inputs, neighbourhood has {}",
            proj.in_dim,
            4 * c
        )));
    }
    let (hs, ws) = (grid.hs / 2, grid.ws / 2);
    let mut out = TokenGrid::zeros(hs, ws, proj.out_dim, grid.stride * 2);
    let mut buf = vec![0.0; 4 * c];
    for i in 0..hs {
        for j in 0..ws {
            for (k, (di, dj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let src = (2 * i + di) * grid.ws + 2 * j + dj;
                buf[k * c..(k + 1) * c].copy_from_slice(grid.token(src));
            }
            proj.forward_into(&buf, out.token_mut(i * ws + j));
        }
    }
    Ok(out)
}
