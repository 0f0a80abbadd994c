//! Selective-scan state-space layers and their mask-guided sparse variants.
//!
//! Per channel `e` and state index `n`:
//!
//! ```text
//! h[t] = exp(dt[t,e] * A[e,n]) * h[t-1] + dt[t,e] * B[t,n] * x[t,e]
//! y[t,e] = sum_n C[t,n] * h[t,n] + D[e] * x[t,e]
//! ```
//!
//! `B`, `C` and `dt` are projected from the token itself; `dt` goes through a
//! clamped softplus so every discretized decay lies strictly inside (0, 1).

use rand::Rng;

use crate::cmff::{gather, scatter_rows};
use crate::egms::SparsificationMap;
use crate::error::Result;
use crate::nn::{gelu, silu, softplus, LayerNorm, Linear};
use crate::tokenize::TokenGrid;

pub const DELTA_MIN: f64 = 1e-4;
pub const DELTA_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub channels: usize,
    pub state_dim: usize,
    /// `channels x state_dim`, all negative.
    pub a: Vec<f64>,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub dt_proj: Linear,
    pub d: Vec<f64>,
}

impl SsmParams {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, state_dim: usize) -> Self {
        let a = (0..channels)
            .flat_map(|_| (1..=state_dim).map(|n| -(n as f64)))
            .collect();
        Self {
            channels,
            state_dim,
            a,
            b_proj: Linear::init(rng, channels, state_dim, false),
            c_proj: Linear::init(rng, channels, state_dim, false),
            dt_proj: Linear::init(rng, channels, channels, true),
            d: vec![1.0; channels],
        }
    }

    #[inline]
    pub fn step_size(pre: f64) -> f64 {
        softplus(pre).clamp(DELTA_MIN, DELTA_MAX)
    }
}

/// Runs the recurrence over `seq` (`L x channels`, row-major). The backward
/// direction scans the reversed sequence and re-reverses the output, so
/// `out[t]` always belongs to input position `t`.
pub fn selective_scan(seq: &[f64], params: &SsmParams, direction: Direction) -> Vec<f64> {
    let e = params.channels;
    let ds = params.state_dim;
    assert_eq!(seq.len() % e, 0, "sequence length is not a multiple of {e} channels");
    let len = seq.len() / e;
    let mut out = vec![0.0; seq.len()];
    if len == 0 {
        return out;
    }

    let b_all = params.b_proj.forward_rows(seq);
    let c_all = params.c_proj.forward_rows(seq);
    let dt_all: Vec<f64> = params
        .dt_proj
        .forward_rows(seq)
        .into_iter()
        .map(SsmParams::step_size)
        .collect();

    let mut h = vec![0.0; e * ds];
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::Forward => Box::new(0..len),
        Direction::Backward => Box::new((0..len).rev()),
    };
    for t in order {
        let x = &seq[t * e..(t + 1) * e];
        let b = &b_all[t * ds..(t + 1) * ds];
        let c = &c_all[t * ds..(t + 1) * ds];
        let dt = &dt_all[t * e..(t + 1) * e];
        let y = &mut out[t * e..(t + 1) * e];
        for ch in 0..e {
            let state = &mut h[ch * ds..(ch + 1) * ds];
            let a = &params.a[ch * ds..(ch + 1) * ds];
            let drive = dt[ch] * x[ch];
            let mut acc = 0.0;
            for n in 0..ds {
                let decay = (dt[ch] * a[n]).exp();
                assert!(decay > 0.0 && decay < 1.0, "decay {decay} outside (0, 1)");
                state[n] = decay * state[n] + drive * b[n];
                acc += c[n] * state[n];
            }
            y[ch] = acc + params.d[ch] * x[ch];
        }
    }
    out
}

/// Forward scan plus backward scan.
pub fn bidi_scan(seq: &[f64], forward: &SsmParams, backward: &SsmParams) -> Vec<f64> {
    let mut out = selective_scan(seq, forward, Direction::Forward);
    let back = selective_scan(seq, backward, Direction::Backward);
    for (o, b) in out.iter_mut().zip(back) {
        *o += b;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl MlpWeights {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, hidden: usize) -> Self {
        Self {
            norm: LayerNorm::ones(channels),
            fc1: Linear::init(rng, channels, hidden, true),
            fc2: Linear::init(rng, hidden, channels, true),
        }
    }
}

/// Scan half of a VSS block: norm, input and gate projections, bidirectional
/// scan, SiLU gating, output projection, residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanWeights {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub gate_proj: Linear,
    pub forward: SsmParams,
    pub backward: SsmParams,
    pub out_proj: Linear,
}

impl ScanWeights {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, inner: usize, state_dim: usize) -> Self {
        Self {
            norm: LayerNorm::ones(channels),
            in_proj: Linear::init(rng, channels, inner, true),
            gate_proj: Linear::init(rng, channels, inner, true),
            forward: SsmParams::init(rng, inner, state_dim),
            backward: SsmParams::init(rng, inner, state_dim),
            out_proj: Linear::init(rng, inner, channels, true),
        }
    }
}

/// One Sparse VSS layer: scan block followed by MLP, both under the same mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub scan: ScanWeights,
    pub mlp: MlpWeights,
}

impl LayerWeights {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, state_dim: usize, mlp_ratio: usize) -> Self {
        Self {
            scan: ScanWeights::init(rng, channels, channels, state_dim),
            mlp: MlpWeights::init(rng, channels, channels * mlp_ratio),
        }
    }
}

/// Dense scan block over a token sequence (`L x channels`).
pub fn vss_sequence(seq: &[f64], w: &ScanWeights) -> Vec<f64> {
    let z = w.norm.forward_rows(seq);
    let u = w.in_proj.forward_rows(&z);
    let gate = w.gate_proj.forward_rows(&z);
    let mut s = bidi_scan(&u, &w.forward, &w.backward);
    for (v, g) in s.iter_mut().zip(&gate) {
        *v *= silu(*g);
    }
    let mut out = w.out_proj.forward_rows(&s);
    for (o, x) in out.iter_mut().zip(seq) {
        *o += x;
    }
    out
}

/// Dense MLP with residual over a token sequence.
pub fn mlp_sequence(seq: &[f64], w: &MlpWeights) -> Vec<f64> {
    let z = w.norm.forward_rows(seq);
    let mut hidden = w.fc1.forward_rows(&z);
    for v in hidden.iter_mut() {
        *v = gelu(*v);
    }
    let mut out = w.fc2.forward_rows(&hidden);
    for (o, x) in out.iter_mut().zip(seq) {
        *o += x;
    }
    out
}

/// Dense scan block over the full row-major flattening of `grid`.
pub fn vss_layer_dense(grid: &TokenGrid, w: &ScanWeights) -> TokenGrid {
    TokenGrid {
        features: vss_sequence(&grid.features, w),
        ..grid.clone()
    }
}

pub fn mlp_dense(grid: &TokenGrid, w: &MlpWeights) -> TokenGrid {
    TokenGrid {
        features: mlp_sequence(&grid.features, w),
        ..grid.clone()
    }
}

/// Scan block on kept tokens only. Kept tokens are gathered in row-major
/// order, processed as one sequence and scattered back; dropped tokens are
/// copied through untouched.
pub fn sparse_vss_layer(grid: &TokenGrid, mask: &SparsificationMap, w: &ScanWeights) -> Result<TokenGrid> {
    let gathered = gather(grid, mask)?;
    let processed = vss_sequence(&gathered.tokens, w);
    scatter_rows(&processed, &gathered.indices, grid)
}

pub fn sparse_mlp(grid: &TokenGrid, mask: &SparsificationMap, w: &MlpWeights) -> Result<TokenGrid> {
    let gathered = gather(grid, mask)?;
    let processed = mlp_sequence(&gathered.tokens, w);
    scatter_rows(&processed, &gathered.indices, grid)
}

/// Full Sparse VSS layer: scan block then MLP under the same mask.
pub fn sparse_vss_block(grid: &TokenGrid, mask: &SparsificationMap, w: &LayerWeights) -> Result<TokenGrid> {
    let g = sparse_vss_layer(grid, mask, &w.scan)?;
    sparse_mlp(&g, mask, &w.mlp)
}

pub fn vss_block_dense(grid: &TokenGrid, w: &LayerWeights) -> TokenGrid {
    mlp_dense(&vss_layer_dense(grid, &w.scan), &w.mlp)
}
