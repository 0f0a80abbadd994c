//! Cross-modality focus fusion.
//!
//! Complementarity-aware enhancement scales a modality's tokens by `beta`
//! wherever the other modality kept a token this one dropped. Focused
//! interlaced scanning then gathers the union of both masks from each
//! modality, interleaves the two gathered sequences token by token (image
//! first), runs one bidirectional scan over the combined sequence and
//! scatters the results back. Tokens outside the union never enter the scan.

use rand::Rng;

use crate::egms::SparsificationMap;
use crate::error::{Error, Result};
use crate::nn::{DepthwiseConv3, Linear};
use crate::ssm::{bidi_scan, mlp_sequence, sparse_mlp, MlpWeights, SsmParams};
use crate::tokenize::TokenGrid;

pub const DEFAULT_BETA: f64 = 1.5;

fn check_pair(a: &SparsificationMap, b: &SparsificationMap) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "masks of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `M_E - M_I`, evaluated as `M_E xor (M_E and M_I)`: positions the event
/// modality kept and the image modality dropped.
pub fn complement_mask(m_e: &SparsificationMap, m_i: &SparsificationMap) -> Result<SparsificationMap> {
    check_pair(m_e, m_i)?;
    let bits = m_e.bits().iter().zip(m_i.bits()).map(|(&e, &i)| e ^ (e & i)).collect();
    SparsificationMap::with_shape(m_e.hs(), m_e.ws(), bits)
}

pub fn union_mask(m_i: &SparsificationMap, m_e: &SparsificationMap) -> Result<SparsificationMap> {
    check_pair(m_i, m_e)?;
    let bits = m_i.bits().iter().zip(m_e.bits()).map(|(&a, &b)| a | b).collect();
    SparsificationMap::with_shape(m_i.hs(), m_i.ws(), bits)
}

/// Per-token enhancement factors, each exactly 1 or `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancementMap {
    pub values: Vec<f64>,
}

pub fn cae_map(diff: &SparsificationMap, beta: f64) -> Result<EnhancementMap> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    Ok(EnhancementMap {
        values: diff.bits().iter().map(|&d| if d { beta } else { 1.0 }).collect(),
    })
}

pub fn cae_apply(map: &EnhancementMap, grid: &TokenGrid) -> Result<TokenGrid> {
    if map.values.len() != grid.token_count() {
        return Err(Error::ShapeMismatch(format!(
            "enhancement map has {} entries, grid has {} tokens",
            map.values.len(),
            grid.token_count()
        )));
    }
    let mut out = grid.clone();
    for (i, &m) in map.values.iter().enumerate() {
        if m != 1.0 {
            for v in out.token_mut(i) {
                *v *= m;
            }
        }
    }
    Ok(out)
}

/// Tokens at the kept positions of a mask, in ascending row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct GatheredSequence {
    pub channels: usize,
    /// `indices.len() x channels`.
    pub tokens: Vec<f64>,
    pub indices: Vec<usize>,
}

impl GatheredSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn gather(grid: &TokenGrid, mask: &SparsificationMap) -> Result<GatheredSequence> {
    mask.ensure_len(grid.token_count())?;
    let indices = mask.kept_indices();
    let mut tokens = Vec::with_capacity(indices.len() * grid.channels);
    for &i in &indices {
        tokens.extend_from_slice(grid.token(i));
    }
    Ok(GatheredSequence {
        channels: grid.channels,
        tokens,
        indices,
    })
}

/// Alternates image and event tokens: output `2k` is image token `k`,
/// output `2k + 1` is event token `k`.
pub fn interleave(image: &GatheredSequence, event: &GatheredSequence) -> Result<Vec<f64>> {
    if image.indices != event.indices {
        return Err(Error::IndexMismatch);
    }
    if image.channels != event.channels {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} channels",
            image.channels, event.channels
        )));
    }
    let c = image.channels;
    let mut out = Vec::with_capacity(2 * image.tokens.len());
    for (a, b) in image.tokens.chunks_exact(c).zip(event.tokens.chunks_exact(c)) {
        out.extend_from_slice(a);
        out.extend_from_slice(b);
    }
    Ok(out)
}

/// Splits an interleaved `2K x channels` sequence into its even and odd rows.
pub fn deinterleave(seq: &[f64], channels: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    assert!(channels > 0);
    let rows = seq.len() / channels;
    if !rows.is_multiple_of(2) {
        return Err(Error::OddLength(rows));
    }
    let mut even = Vec::with_capacity(seq.len() / 2);
    let mut odd = Vec::with_capacity(seq.len() / 2);
    for pair in seq.chunks_exact(2 * channels) {
        even.extend_from_slice(&pair[..channels]);
        odd.extend_from_slice(&pair[channels..]);
    }
    Ok((even, odd))
}

/// Copies `base` and overwrites the gathered positions with `seq`'s tokens.
pub fn scatter(seq: &GatheredSequence, base: &TokenGrid) -> Result<TokenGrid> {
    if seq.channels != base.channels {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} channels",
            seq.channels, base.channels
        )));
    }
    scatter_rows(&seq.tokens, &seq.indices, base)
}

pub fn scatter_rows(rows: &[f64], indices: &[usize], base: &TokenGrid) -> Result<TokenGrid> {
    let c = base.channels;
    if rows.len() != indices.len() * c {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {} indices of {c} channels",
            rows.len(),
            indices.len()
        )));
    }
    let n = base.token_count();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let mut out = base.clone();
    for (&i, row) in indices.iter().zip(rows.chunks_exact(c)) {
        out.token_mut(i).copy_from_slice(row);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    pub image_proj: Linear,
    pub event_proj: Linear,
    pub image_dw: DepthwiseConv3,
    pub event_dw: DepthwiseConv3,
    pub forward: SsmParams,
    pub backward: SsmParams,
    pub mlp: MlpWeights,
}

impl FusionWeights {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, state_dim: usize, mlp_ratio: usize) -> Self {
        Self {
            image_proj: Linear::init(rng, channels, channels, true),
            event_proj: Linear::init(rng, channels, channels, true),
            image_dw: DepthwiseConv3::init(rng, channels),
            event_dw: DepthwiseConv3::init(rng, channels),
            forward: SsmParams::init(rng, channels, state_dim),
            backward: SsmParams::init(rng, channels, state_dim),
            mlp: MlpWeights::init(rng, channels, channels * mlp_ratio),
        }
    }
}

/// Linear projection per token followed by 3x3 depthwise mixing over the
/// whole grid. Runs before gathering so kept tokens still see their spatial
/// neighbourhood.
pub fn preprocess(grid: &TokenGrid, proj: &Linear, dw: &DepthwiseConv3) -> TokenGrid {
    let projected = proj.forward_rows(&grid.features);
    TokenGrid {
        features: dw.forward(grid.hs, grid.ws, &projected),
        ..grid.clone()
    }
}

/// Focused interlaced scan. Returns the enhanced image and event grids; tokens
/// outside `M_I or M_E` equal the preprocessed inputs bit for bit.
pub fn fi_mamba(
    f_i: &TokenGrid,
    f_e: &TokenGrid,
    m_i: &SparsificationMap,
    m_e: &SparsificationMap,
    w: &FusionWeights,
) -> Result<(TokenGrid, TokenGrid)> {
    f_i.ensure_same_shape(f_e)?;
    m_i.ensure_len(f_i.token_count())?;
    m_e.ensure_len(f_i.token_count())?;
    let pre_i = preprocess(f_i, &w.image_proj, &w.image_dw);
    let pre_e = preprocess(f_e, &w.event_proj, &w.event_dw);
    let union = union_mask(m_i, m_e)?;
    let g_i = gather(&pre_i, &union)?;
    let g_e = gather(&pre_e, &union)?;
    let mixed = bidi_scan(&interleave(&g_i, &g_e)?, &w.forward, &w.backward);
    let (enh_i, enh_e) = deinterleave(&mixed, f_i.channels)?;
    Ok((
        scatter_rows(&enh_i, &g_i.indices, &pre_i)?,
        scatter_rows(&enh_e, &g_e.indices, &pre_e)?,
    ))
}

/// Enhancement in both directions, focused interlaced scan, sum of the two
/// enhanced grids, then a sparse MLP over the union mask.
pub fn cmff(
    f_i: &TokenGrid,
    f_e: &TokenGrid,
    m_i: &SparsificationMap,
    m_e: &SparsificationMap,
    w: &FusionWeights,
    beta: f64,
) -> Result<TokenGrid> {
    f_i.ensure_same_shape(f_e)?;
    let n = f_i.token_count();
    m_i.ensure_len(n)?;
    m_e.ensure_len(n)?;
    let cae_i = cae_apply(&cae_map(&complement_mask(m_e, m_i)?, beta)?, f_i)?;
    let cae_e = cae_apply(&cae_map(&complement_mask(m_i, m_e)?, beta)?, f_e)?;
    let (enh_i, enh_e) = fi_mamba(&cae_i, &cae_e, m_i, m_e, w)?;
    let mut fused = enh_i;
    for (a, b) in fused.features.iter_mut().zip(&enh_e.features) {
        *a += b;
    }
    sparse_mlp(&fused, &union_mask(m_i, m_e)?, &w.mlp)
}

/// Dense counterpart of [`fi_mamba`]: every token is interleaved and scanned.
pub fn fi_mamba_dense(f_i: &TokenGrid, f_e: &TokenGrid, w: &FusionWeights) -> Result<(TokenGrid, TokenGrid)> {
    f_i.ensure_same_shape(f_e)?;
    let c = f_i.channels;
    let pre_i = preprocess(f_i, &w.image_proj, &w.image_dw);
    let pre_e = preprocess(f_e, &w.event_proj, &w.event_dw);
    let mut seq = Vec::with_capacity(2 * pre_i.features.len());
    for (a, b) in pre_i.features.chunks_exact(c).zip(pre_e.features.chunks_exact(c)) {
        seq.extend_from_slice(a);
        seq.extend_from_slice(b);
    }
    let mixed = bidi_scan(&seq, &w.forward, &w.backward);
    let (a, b) = deinterleave(&mixed, c)?;
    Ok((TokenGrid { features: a, ..pre_i }, TokenGrid { features: b, ..pre_e }))
}

/// Dense fusion with no enhancement (both masks are all ones).
pub fn cmff_dense(f_i: &TokenGrid, f_e: &TokenGrid, w: &FusionWeights) -> Result<TokenGrid> {
    let (a, b) = fi_mamba_dense(f_i, f_e, w)?;
    let mut fused = a;
    for (x, y) in fused.features.iter_mut().zip(&b.features) {
        *x += y;
    }
    fused.features = mlp_sequence(&fused.features, &w.mlp);
    Ok(fused)
}
