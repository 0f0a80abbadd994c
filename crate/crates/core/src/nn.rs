//! Small dense building blocks shared by the backbone layers. Everything is
//! f64 and every reduction runs in a fixed left-to-right order, so results do
//! not depend on how callers batch or schedule work.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization.
    pub fn init<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize, with_bias: bool) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = with_bias.then(|| (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect());
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn from_weights(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Option<Vec<f64>>) -> Self {
        assert_eq!(weight.len(), in_dim * out_dim);
        if let Some(b) = &bias {
            assert_eq!(b.len(), out_dim);
        }
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    #[inline]
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, row) in out.iter_mut().zip(self.weight.chunks_exact(self.in_dim)) {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o = acc;
        }
        if let Some(b) = &self.bias {
            for (o, b) in out.iter_mut().zip(b) {
                *o += b;
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        out
    }

    /// Applies the map to each `in_dim` row of `rows`.
    pub fn forward_rows(&self, rows: &[f64]) -> Vec<f64> {
        let n = rows.len() / self.in_dim;
        let mut out = vec![0.0; n * self.out_dim];
        for (x, o) in rows.chunks_exact(self.in_dim).zip(out.chunks_exact_mut(self.out_dim)) {
            self.forward_into(x, o);
        }
        out
    }

    /// Multiply-accumulates per input row.
    pub fn macs_per_row(&self) -> u64 {
        (self.in_dim * self.out_dim) as u64
    }
}

/// Per-token layer normalization with a learned gain and no shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
}

pub const LN_EPS: f64 = 1e-6;

impl LayerNorm {
    pub fn ones(dim: usize) -> Self {
        Self { gain: vec![1.0; dim] }
    }

    pub fn forward_rows(&self, rows: &[f64]) -> Vec<f64> {
        let c = self.gain.len();
        let mut out = vec![0.0; rows.len()];
        for (x, o) in rows.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            let mean = x.iter().sum::<f64>() / c as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ((o, v), g) in o.iter_mut().zip(x).zip(&self.gain) {
                *o = (v - mean) * inv * g;
            }
        }
        out
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh())
}

/// 3x3 depthwise convolution over an `hs x ws x channels` token grid with zero
/// padding. `kernel` is `channels x 9`, taps in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseConv3 {
    pub channels: usize,
    pub kernel: Vec<f64>,
}

impl DepthwiseConv3 {
    pub fn init<R: Rng>(rng: &mut R, channels: usize) -> Self {
        let bound = 1.0 / 3.0;
        Self {
            channels,
            kernel: (0..channels * 9).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn forward(&self, hs: usize, ws: usize, features: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let mut out = vec![0.0; features.len()];
        for i in 0..hs {
            for j in 0..ws {
                let o = &mut out[(i * ws + j) * c..(i * ws + j + 1) * c];
                for (tap, (di, dj)) in (-1i64..=1)
                    .flat_map(|di| (-1i64..=1).map(move |dj| (di, dj)))
                    .enumerate()
                {
                    let (si, sj) = (i as i64 + di, j as i64 + dj);
                    if si < 0 || sj < 0 || si >= hs as i64 || sj >= ws as i64 {
                        continue;
                    }
                    let src = ((si as usize) * ws + sj as usize) * c;
                    for ch in 0..c {
                        o[ch] += self.kernel[ch * 9 + tap] * features[src + ch];
                    }
                }
            }
        }
        out
    }

    pub fn macs_per_token(&self) -> u64 {
        9 * self.channels as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_matches_hand_product() {
        let l = Linear::from_weights(2, 2, vec![1.0, 2.0, 3.0, 4.0], Some(vec![0.5, -0.5]));
        assert_eq!(l.forward(&[1.0, 1.0]), vec![3.5, 6.5]);
    }

    #[test]
    fn init_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::init(&mut rng, 16, 4, true);
        assert!(l.weight.iter().all(|w| w.abs() < 0.25));
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        let ln = LayerNorm::ones(4);
        let y = ln.forward_rows(&[1.0, 2.0, 3.0, 4.0]);
        assert!(y.iter().sum::<f64>().abs() < 1e-12);
        let var = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn activations() {
        assert_eq!(silu(0.0), 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(100.0), 100.0);
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(3.0) - 3.0).abs() < 0.01);
    }

    #[test]
    fn depthwise_center_tap_is_identity() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let conv = DepthwiseConv3 { channels: 1, kernel: k };
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(conv.forward(3, 4, &x), x);
    }

    #[test]
    fn depthwise_shift_uses_zero_padding() {
        // tap 5 reads the right neighbour
        let mut k = vec![0.0; 9];
        k[5] = 1.0;
        let conv = DepthwiseConv3 { channels: 1, kernel: k };
        let y = conv.forward(1, 3, &[1.0, 2.0, 3.0]);
        assert_eq!(y, vec![2.0, 3.0, 0.0]);
    }
}
