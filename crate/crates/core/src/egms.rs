//! Event-guided multi-modality sparsification.
//!
//! Image tokens are scored by their L2 activation. Event tokens are scored by
//! per-pixel timestamp accumulation, max-pooled to the token grid and then
//! smoothed with a truncated Gaussian. Both score maps are sharpened by a
//! softmax whose temperature is `r^(1/rho)` and thresholded at
//! `(1 - r)^(1/rho) / N`, where `r` is the event spatial ratio of the sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventStream, DEFAULT_RATIO_FLOOR};
use crate::tokenize::{StageConfig, TokenGrid};

/// Per-token scores laid out on an `hs x ws` grid in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub hs: usize,
    pub ws: usize,
    pub values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(hs: usize, ws: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != hs * ws {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for a {hs}x{ws} grid",
                values.len()
            )));
        }
        Ok(Self { hs, ws, values })
    }

    /// Treats `values` as a single row.
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            hs: 1,
            ws: values.len(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `u32` little-endian length followed by the values as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.values.len());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::parse("offset 0", "score header truncated"));
        }
        let n = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        if bytes.len() != 4 + 8 * n {
            return Err(Error::parse("offset 4", "score payload length mismatch"));
        }
        Ok(Self::from_vec(
            bytes[4..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }
}

/// Binary keep/drop decision per token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SparsificationMap {
    hs: usize,
    ws: usize,
    bits: Vec<bool>,
    kept_count: usize,
}

impl SparsificationMap {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let ws = bits.len();
        Self::with_shape(1, ws, bits).expect("row shape always matches")
    }

    pub fn with_shape(hs: usize, ws: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != hs * ws {
            return Err(Error::ShapeMismatch(format!(
                "{} mask bits for a {hs}x{ws} grid",
                bits.len()
            )));
        }
        let kept_count = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            hs,
            ws,
            bits,
            kept_count,
        })
    }

    pub fn ones(hs: usize, ws: usize) -> Self {
        Self {
            hs,
            ws,
            bits: vec![true; hs * ws],
            kept_count: hs * ws,
        }
    }

    pub fn zeros(hs: usize, ws: usize) -> Self {
        Self {
            hs,
            ws,
            bits: vec![false; hs * ws],
            kept_count: 0,
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn hs(&self) -> usize {
        self.hs
    }

    pub fn ws(&self) -> usize {
        self.ws
    }

    pub fn kept_count(&self) -> usize {
        self.kept_count
    }

    pub fn kept_ratio(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.kept_count as f64 / self.bits.len() as f64
        }
    }

    #[inline]
    pub fn is_kept(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Kept token positions in ascending order.
    pub fn kept_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn ensure_len(&self, n: usize) -> Result<()> {
        if self.bits.len() == n {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "mask has {} bits, grid has {n} tokens",
                self.bits.len()
            )))
        }
    }

    /// True when every kept position of `self` is also kept in `other`.
    pub fn is_subset_of(&self, other: &SparsificationMap) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// How raw modality scores are brought to a common range before the scaled
/// softmax. Raw scores carry units (feature magnitude, microseconds), while
/// the softmax temperature `r^(1/rho)` is dimensionless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreNormalization {
    None,
    /// Divide by the maximum score.
    #[default]
    Max,
    /// Map `[min, max]` onto `[0, 1]`.
    Range,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgcmParams {
    pub rho: f64,
    pub epsilon_r: f64,
    pub sigma: f64,
    /// Neighbourhood radius; the window is `(2*radius+1)^2` tokens.
    pub radius: usize,
    pub normalization: ScoreNormalization,
}

impl Default for EgcmParams {
    fn default() -> Self {
        Self {
            rho: 2.0,
            epsilon_r: DEFAULT_RATIO_FLOOR,
            sigma: 1.0,
            radius: 1,
            normalization: ScoreNormalization::default(),
        }
    }
}

impl EgcmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.radius < 1 {
            return Err(Error::InvalidParameter("neighbourhood radius must be >= 1".into()));
        }
        if !(self.epsilon_r > 0.0 && self.epsilon_r <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ratio floor must lie in (0, 1], got {}",
                self.epsilon_r
            )));
        }
        Ok(())
    }
}

pub fn score_image_l2(grid: &TokenGrid) -> ScoreMap {
    let values = (0..grid.token_count())
        .map(|i| grid.token(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    ScoreMap {
        hs: grid.hs,
        ws: grid.ws,
        values,
    }
}

/// Sums window-relative timestamps per pixel, then max-pools with kernel and
/// stride `stride` onto an `hs x ws` grid.
pub fn score_event_temporal(stream: &EventStream, stride: usize, hs: usize, ws: usize) -> Result<ScoreMap> {
    let g = stream.geometry();
    let (h, w) = (g.height as usize, g.width as usize);
    if stride == 0 || hs * stride != h || ws * stride != w {
        return Err(Error::ShapeMismatch(format!(
            "{hs}x{ws} token grid at stride {stride} does not tile the {w}x{h} sensor"
        )));
    }
    let mut pixel = vec![0.0f64; h * w];
    for e in stream.events() {
        pixel[e.y as usize * w + e.x as usize] += (e.t - g.window_start) as f64;
    }
    let mut values = vec![0.0f64; hs * ws];
    for (i, row) in pixel.chunks_exact(w).enumerate() {
        let ti = i / stride;
        for (j, &v) in row.iter().enumerate() {
            let slot = &mut values[ti * ws + j / stride];
            if v > *slot {
                *slot = v;
            }
        }
    }
    Ok(ScoreMap { hs, ws, values })
}

/// Gaussian-weighted mean over the `(2r+1)^2` neighbourhood of each token.
/// Windows are truncated at the grid border and the weights renormalized.
pub fn score_event_spatiotemporal(temporal: &ScoreMap, params: &EgcmParams) -> ScoreMap {
    let (hs, ws) = (temporal.hs, temporal.ws);
    let r = params.radius as i64;
    let two_sigma_sq = 2.0 * params.sigma * params.sigma;
    let mut values = vec![0.0; hs * ws];
    for ci in 0..hs as i64 {
        for cj in 0..ws as i64 {
            let mut num = 0.0;
            let mut den = 0.0;
            for qi in (ci - r).max(0)..=(ci + r).min(hs as i64 - 1) {
                for qj in (cj - r).max(0)..=(cj + r).min(ws as i64 - 1) {
                    let d2 = ((qi - ci) * (qi - ci) + (qj - cj) * (qj - cj)) as f64;
                    let wq = (-d2 / two_sigma_sq).exp();
                    num += wq * temporal.values[qi as usize * ws + qj as usize];
                    den += wq;
                }
            }
            values[ci as usize * ws + cj as usize] = num / den;
        }
    }
    ScoreMap { hs, ws, values }
}

/// Returns `(scale, control) = (r^(1/rho), (1 - r)^(1/rho))`.
pub fn egcm_factors(r: f64, rho: f64) -> (f64, f64) {
    debug_assert!(r > 0.0 && r <= 1.0, "ratio {r} outside (0, 1]");
    debug_assert!(rho > 0.0);
    let inv = 1.0 / rho;
    (r.powf(inv), (1.0 - r).powf(inv))
}

/// `softmax(values / scale)` with max subtraction.
pub fn scaled_softmax(scores: &ScoreMap, scale: f64) -> ScoreMap {
    debug_assert!(scale > 0.0);
    let max = scores.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.values.iter().map(|v| ((v - max) / scale).exp()).collect();
    let total: f64 = exps.iter().sum();
    ScoreMap {
        hs: scores.hs,
        ws: scores.ws,
        values: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// Threshold `alpha = control / N`; a token is kept when its score is `>= alpha`.
pub fn make_mask(scores: &ScoreMap, control: f64) -> SparsificationMap {
    let alpha = control / scores.len().max(1) as f64;
    threshold_mask(scores, alpha)
}

pub fn threshold_mask(scores: &ScoreMap, alpha: f64) -> SparsificationMap {
    let bits = scores.values.iter().map(|&s| s >= alpha).collect();
    SparsificationMap::with_shape(scores.hs, scores.ws, bits).expect("score map shape is consistent")
}

/// Keeps the `k` highest-scoring tokens regardless of scene content; ties go
/// to the lower index. This is the fixed-kept-rate baseline the adaptive
/// threshold is compared against.
pub fn fixed_count_mask(scores: &ScoreMap, k: usize) -> SparsificationMap {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.values[b].total_cmp(&scores.values[a]).then(a.cmp(&b)));
    let mut bits = vec![false; scores.len()];
    for &i in order.iter().take(k) {
        bits[i] = true;
    }
    SparsificationMap::with_shape(scores.hs, scores.ws, bits).expect("score map shape is consistent")
}

pub fn normalize_scores(scores: &ScoreMap, mode: ScoreNormalization) -> ScoreMap {
    let max = scores.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.values.iter().copied().fold(f64::INFINITY, f64::min);
    let values = match mode {
        ScoreNormalization::None => scores.values.clone(),
        ScoreNormalization::Max if max > 0.0 => scores.values.iter().map(|v| v / max).collect(),
        ScoreNormalization::Range if max > min => scores.values.iter().map(|v| (v - min) / (max - min)).collect(),
        _ => vec![0.0; scores.len()],
    };
    ScoreMap {
        hs: scores.hs,
        ws: scores.ws,
        values,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgmsOptions {
    pub params: EgcmParams,
    /// Stage 1 reuses the event map for the image modality.
    pub stage1_override: bool,
}

impl Default for EgmsOptions {
    fn default() -> Self {
        Self {
            params: EgcmParams::default(),
            stage1_override: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EgmsOutput {
    pub image_mask: SparsificationMap,
    pub event_mask: SparsificationMap,
    /// Softmax-normalized scores.
    pub image_scores: ScoreMap,
    pub event_scores: ScoreMap,
    pub scale: f64,
    pub control: f64,
    pub alpha: f64,
}

/// Runs both scoring chains for one stage. `ratio` is the sample's event
/// spatial ratio, computed once at sensor resolution.
pub fn egms_stage(
    image_grid: &TokenGrid,
    event_grid: &TokenGrid,
    stream: &EventStream,
    stage: &StageConfig,
    options: &EgmsOptions,
    ratio: f64,
) -> Result<EgmsOutput> {
    if image_grid.hs != event_grid.hs || image_grid.ws != event_grid.ws {
        return Err(Error::ShapeMismatch(format!(
            "image grid {}x{} vs event grid {}x{}",
            image_grid.hs, image_grid.ws, event_grid.hs, event_grid.ws
        )));
    }
    let params = &options.params;
    params.validate()?;
    let r = ratio.clamp(params.epsilon_r, 1.0);
    let (scale, control) = egcm_factors(r, params.rho);
    let n = image_grid.token_count();

    let temporal = score_event_temporal(stream, stage.stride, event_grid.hs, event_grid.ws)?;
    let event_raw = score_event_spatiotemporal(&temporal, params);
    let event_scores = scaled_softmax(&normalize_scores(&event_raw, params.normalization), scale);
    let event_mask = make_mask(&event_scores, control);

    let image_raw = score_image_l2(image_grid);
    let image_scores = scaled_softmax(&normalize_scores(&image_raw, params.normalization), scale);
    let image_mask = if stage.stage_index == 1 && options.stage1_override {
        event_mask.clone()
    } else {
        make_mask(&image_scores, control)
    };

    Ok(EgmsOutput {
        image_mask,
        event_mask,
        image_scores,
        event_scores,
        scale,
        control,
        alpha: control / n as f64,
    })
}
