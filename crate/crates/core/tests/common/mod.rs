//! Test-side reference implementations. Everything here is written from the
//! defining formulas with plain nested loops and shares no kernels with the
//! library; only weight containers are borrowed.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbe_sparse::cmff::FusionWeights;
use rgbe_sparse::event::{validate_stream, Event, EventStream, SensorGeometry};
use rgbe_sparse::netpbm::RgbImage;
use rgbe_sparse::nn::{DepthwiseConv3, LayerNorm, Linear};
use rgbe_sparse::ssm::{LayerWeights, MlpWeights, ScanWeights, SsmParams};
use rgbe_sparse::weights::ModelWeights;
use rgbe_sparse::{ModelConfig, SparsificationMap, TokenGrid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `max |a - b| / max(max |b|, 1e-300)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-300);
    num / den
}

pub fn random_grid(r: &mut ChaCha8Rng, hs: usize, ws: usize, c: usize) -> TokenGrid {
    let features = (0..hs * ws * c).map(|_| r.gen_range(-1.0..1.0)).collect();
    TokenGrid::from_features(hs, ws, c, 4, features).unwrap()
}

pub fn random_mask(r: &mut ChaCha8Rng, hs: usize, ws: usize) -> SparsificationMap {
    let p: f64 = r.gen_range(0.05..0.95);
    let bits = (0..hs * ws).map(|_| r.gen_bool(p)).collect();
    SparsificationMap::with_shape(hs, ws, bits).unwrap()
}

pub fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    let mut img = RgbImage::new(w, h);
    for v in img.data.iter_mut() {
        *v = r.gen();
    }
    img
}

pub fn random_stream(r: &mut ChaCha8Rng, w: u32, h: u32, n: usize) -> EventStream {
    let geo = SensorGeometry::new(w, h, 1_000, 51_000).unwrap();
    let events = (0..n)
        .map(|_| {
            Event::new(
                r.gen_range(0..w) as u16,
                r.gen_range(0..h) as u16,
                r.gen_range(1_000..=51_000),
                if r.gen_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    validate_stream(events, geo).unwrap()
}

pub fn linear(l: &Linear, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; l.out_dim];
    for o in 0..l.out_dim {
        let mut acc = 0.0;
        for i in 0..l.in_dim {
            acc += l.weight[o * l.in_dim + i] * x[i];
        }
        if let Some(b) = &l.bias {
            acc += b[o];
        }
        out[o] = acc;
    }
    out
}

pub fn layer_norm(n: &LayerNorm, x: &[f64]) -> Vec<f64> {
    let c = x.len() as f64;
    let mean = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
    x.iter()
        .zip(&n.gain)
        .map(|(v, g)| (v - mean) / (var + 1e-6).sqrt() * g)
        .collect()
}

fn rows(seq: &[f64], c: usize) -> Vec<Vec<f64>> {
    seq.chunks(c).map(|r| r.to_vec()).collect()
}

fn flatten(rows: Vec<Vec<f64>>) -> Vec<f64> {
    rows.into_iter().flatten().collect()
}

/// Sequential recurrence, one token at a time, with every projection
/// recomputed from the raw weights at the step that needs it.
pub fn scan(seq: &[f64], p: &SsmParams, backward: bool) -> Vec<f64> {
    let e = p.channels;
    let ds = p.state_dim;
    let xs = rows(seq, e);
    let len = xs.len();
    let mut h = vec![vec![0.0; ds]; e];
    let mut ys = vec![vec![0.0; e]; len];
    for step in 0..len {
        let t = if backward { len - 1 - step } else { step };
        let x = &xs[t];
        let b = linear(&p.b_proj, x);
        let c = linear(&p.c_proj, x);
        let dt: Vec<f64> = linear(&p.dt_proj, x)
            .into_iter()
            .map(|z| (1.0 + z.exp()).ln().clamp(1e-4, 10.0))
            .collect();
        for ch in 0..e {
            let mut y = p.d[ch] * x[ch];
            for n in 0..ds {
                let a_bar = (dt[ch] * p.a[ch * ds + n]).exp();
                h[ch][n] = a_bar * h[ch][n] + dt[ch] * b[n] * x[ch];
                y += c[n] * h[ch][n];
            }
            ys[t][ch] = y;
        }
    }
    flatten(ys)
}

pub fn bidi(seq: &[f64], f: &SsmParams, b: &SsmParams) -> Vec<f64> {
    scan(seq, f, false)
        .iter()
        .zip(scan(seq, b, true))
        .map(|(x, y)| x + y)
        .collect()
}

fn silu(x: f64) -> f64 {
    x * (1.0 / (1.0 + (-x).exp()))
}

fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn vss(seq: &[f64], w: &ScanWeights) -> Vec<f64> {
    let c = w.norm.gain.len();
    let xs = rows(seq, c);
    let z: Vec<Vec<f64>> = xs.iter().map(|x| layer_norm(&w.norm, x)).collect();
    let u = flatten(z.iter().map(|r| linear(&w.in_proj, r)).collect());
    let s = bidi(&u, &w.forward, &w.backward);
    let inner = w.in_proj.out_dim;
    let mut out = Vec::new();
    for (t, x) in xs.iter().enumerate() {
        let gate = linear(&w.gate_proj, &z[t]);
        let gated: Vec<f64> = (0..inner).map(|k| s[t * inner + k] * silu(gate[k])).collect();
        let o = linear(&w.out_proj, &gated);
        out.extend(o.iter().zip(x).map(|(a, b)| a + b));
    }
    out
}

pub fn mlp(seq: &[f64], w: &MlpWeights) -> Vec<f64> {
    let c = w.norm.gain.len();
    let mut out = Vec::new();
    for x in rows(seq, c) {
        let hidden: Vec<f64> = linear(&w.fc1, &layer_norm(&w.norm, &x)).into_iter().map(gelu).collect();
        out.extend(linear(&w.fc2, &hidden).iter().zip(&x).map(|(a, b)| a + b));
    }
    out
}

pub fn block(seq: &[f64], w: &LayerWeights) -> Vec<f64> {
    mlp(&vss(seq, &w.scan), &w.mlp)
}

pub fn depthwise(conv: &DepthwiseConv3, hs: usize, ws: usize, feats: &[f64]) -> Vec<f64> {
    let c = conv.channels;
    let mut out = vec![0.0; feats.len()];
    for i in 0..hs {
        for j in 0..ws {
            for ch in 0..c {
                let mut acc = 0.0;
                for ki in 0..3 {
                    for kj in 0..3 {
                        let (si, sj) = (i as i64 + ki as i64 - 1, j as i64 + kj as i64 - 1);
                        if si >= 0 && sj >= 0 && (si as usize) < hs && (sj as usize) < ws {
                            acc += conv.kernel[ch * 9 + ki * 3 + kj] * feats[(si as usize * ws + sj as usize) * c + ch];
                        }
                    }
                }
                out[(i * ws + j) * c + ch] = acc;
            }
        }
    }
    out
}

pub fn preprocess(g: &TokenGrid, proj: &Linear, dw: &DepthwiseConv3) -> Vec<f64> {
    let projected = flatten(rows(&g.features, g.channels).iter().map(|r| linear(proj, r)).collect());
    depthwise(dw, g.hs, g.ws, &projected)
}

/// Masked focused interlaced scan written out directly: positions in the
/// union are visited in row-major order, image token before event token.
pub fn fi_mamba(
    f_i: &TokenGrid,
    f_e: &TokenGrid,
    m_i: &[bool],
    m_e: &[bool],
    w: &FusionWeights,
) -> (Vec<f64>, Vec<f64>) {
    let c = f_i.channels;
    let mut pre_i = preprocess(f_i, &w.image_proj, &w.image_dw);
    let mut pre_e = preprocess(f_e, &w.event_proj, &w.event_dw);
    let kept: Vec<usize> = (0..m_i.len()).filter(|&k| m_i[k] || m_e[k]).collect();
    let mut seq = Vec::new();
    for &k in &kept {
        seq.extend_from_slice(&pre_i[k * c..(k + 1) * c]);
        seq.extend_from_slice(&pre_e[k * c..(k + 1) * c]);
    }
    let mixed = bidi(&seq, &w.forward, &w.backward);
    for (n, &k) in kept.iter().enumerate() {
        pre_i[k * c..(k + 1) * c].copy_from_slice(&mixed[2 * n * c..(2 * n + 1) * c]);
        pre_e[k * c..(k + 1) * c].copy_from_slice(&mixed[(2 * n + 1) * c..(2 * n + 2) * c]);
    }
    (pre_i, pre_e)
}

/// Masked fusion: enhancement, interlaced scan, sum, MLP on the union.
pub fn cmff(f_i: &TokenGrid, f_e: &TokenGrid, m_i: &[bool], m_e: &[bool], w: &FusionWeights, beta: f64) -> Vec<f64> {
    let c = f_i.channels;
    let mut a = f_i.clone();
    let mut b = f_e.clone();
    for k in 0..m_i.len() {
        if m_e[k] && !m_i[k] {
            a.features[k * c..(k + 1) * c].iter_mut().for_each(|v| *v *= beta);
        }
        if m_i[k] && !m_e[k] {
            b.features[k * c..(k + 1) * c].iter_mut().for_each(|v| *v *= beta);
        }
    }
    let (x, y) = fi_mamba(&a, &b, m_i, m_e, w);
    let sum: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
    let mut out = sum.clone();
    for k in 0..m_i.len() {
        if m_i[k] || m_e[k] {
            let row = mlp(&sum[k * c..(k + 1) * c], &w.mlp);
            out[k * c..(k + 1) * c].copy_from_slice(&row);
        }
    }
    out
}

/// Brute-force voxel grid: every event visits every bin.
pub fn voxelize(stream: &EventStream, bins: usize) -> Vec<f64> {
    let g = stream.geometry();
    let (h, w) = (g.height as usize, g.width as usize);
    let mut v = vec![0.0; bins * h * w];
    for e in stream.events() {
        let t_star = (e.t - g.window_start) as f64 / (g.window_end - g.window_start) as f64 * (bins - 1) as f64;
        for b in 0..bins {
            let weight = (1.0 - (b as f64 - t_star).abs()).max(0.0);
            v[(b * h + e.y as usize) * w + e.x as usize] += e.p as f64 * weight;
        }
    }
    v
}

/// Patch embedding from planar `c x h x w` data with explicit index math.
pub fn patch_embed(planes: &[f64], c: usize, h: usize, w: usize, patch: usize, proj: &Linear) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..h / patch {
        for j in 0..w / patch {
            let mut flat = Vec::with_capacity(c * patch * patch);
            for ch in 0..c {
                for py in 0..patch {
                    for px in 0..patch {
                        flat.push(planes[(ch * h + i * patch + py) * w + j * patch + px]);
                    }
                }
            }
            out.extend(linear(proj, &flat));
        }
    }
    out
}

pub fn patch_merge(feats: &[f64], hs: usize, ws: usize, c: usize, proj: &Linear) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..hs / 2 {
        for j in 0..ws / 2 {
            let mut cat = Vec::with_capacity(4 * c);
            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let k = (2 * i + di) * ws + 2 * j + dj;
                cat.extend_from_slice(&feats[k * c..(k + 1) * c]);
            }
            out.extend(linear(proj, &cat));
        }
    }
    out
}

pub struct OracleStage {
    pub image: Vec<f64>,
    pub event: Vec<f64>,
    pub fused: Option<Vec<f64>>,
}

/// Whole forward pass with every token kept.
pub fn pipeline(image: &RgbImage, stream: &EventStream, cfg: &ModelConfig, w: &ModelWeights) -> Vec<OracleStage> {
    let (h, wd) = (cfg.height, cfg.width);
    let mut planes = vec![0.0; 3 * h * wd];
    for y in 0..h {
        for x in 0..wd {
            let px = image.pixel(x, y);
            for ch in 0..3 {
                planes[(ch * h + y) * wd + x] = px[ch] as f64 / 255.0;
            }
        }
    }
    let mut img = patch_embed(&planes, 3, h, wd, 4, &w.image.embed);
    let mut evt = patch_embed(&voxelize(stream, cfg.bins), cfg.bins, h, wd, 4, &w.event.embed);
    let mut out = Vec::new();
    for s in 0..4 {
        let (hs, ws) = cfg.grid_size(s + 1);
        let c = cfg.channels[s];
        if s > 0 {
            let (ph, pw) = cfg.grid_size(s);
            img = patch_merge(&img, ph, pw, cfg.channels[s - 1], &w.image.merges[s - 1]);
            evt = patch_merge(&evt, ph, pw, cfg.channels[s - 1], &w.event.merges[s - 1]);
        }
        for l in &w.image.layers[s] {
            img = block(&img, l);
        }
        for l in &w.event.layers[s] {
            evt = block(&evt, l);
        }
        let fused = (s > 0).then(|| {
            let gi = TokenGrid::from_features(hs, ws, c, 4, img.clone()).unwrap();
            let ge = TokenGrid::from_features(hs, ws, c, 4, evt.clone()).unwrap();
            let ones = vec![true; hs * ws];
            cmff(&gi, &ge, &ones, &ones, &w.fusion[s - 1], cfg.beta)
        });
        out.push(OracleStage {
            image: img.clone(),
            event: evt.clone(),
            fused,
        });
    }
    out
}

/// Second, independent MAC count: walks the actual weight shapes and counts
/// tokens per stage. Returns `(component, stage, macs)` triples.
pub fn recount_macs(
    cfg: &ModelConfig,
    w: &ModelWeights,
    kept: &[(usize, usize, usize)],
) -> Vec<(&'static str, usize, u64)> {
    let lin = |l: &Linear| (l.in_dim * l.out_dim) as u64;
    let scan_dir = |p: &SsmParams| {
        lin(&p.b_proj) + lin(&p.c_proj) + lin(&p.dt_proj) + (3 * p.channels * p.state_dim + 2 * p.channels) as u64
    };
    let mut out = Vec::new();
    for s in 0..4 {
        let (hs, ws) = cfg.grid_size(s + 1);
        let n = (hs * ws) as u64;
        let (k_i, k_e, k_u) = (kept[s].0 as u64, kept[s].1 as u64, kept[s].2 as u64);
        let embed = if s == 0 {
            n * (lin(&w.image.embed) + lin(&w.event.embed))
        } else {
            n * (lin(&w.image.merges[s - 1]) + lin(&w.event.merges[s - 1]))
        };
        out.push(("embed", s + 1, embed));
        let (mut proj, mut scan_m, mut mlp_m) = (0, 0, 0);
        for (layers, k) in [(&w.image.layers[s], k_i), (&w.event.layers[s], k_e)] {
            for l in layers {
                proj += k * (lin(&l.scan.in_proj) + lin(&l.scan.gate_proj) + lin(&l.scan.out_proj));
                scan_m += k * (scan_dir(&l.scan.forward) + scan_dir(&l.scan.backward));
                mlp_m += k * (lin(&l.mlp.fc1) + lin(&l.mlp.fc2));
            }
        }
        out.push(("projections", s + 1, proj));
        out.push(("scan", s + 1, scan_m));
        out.push(("mlp", s + 1, mlp_m));
        if s == 0 {
            out.push(("fusion_pre", 1, 0));
            out.push(("fusion", 1, 0));
        } else {
            let f = &w.fusion[s - 1];
            let dw = |d: &DepthwiseConv3| 9 * d.channels as u64;
            out.push((
                "fusion_pre",
                s + 1,
                n * (lin(&f.image_proj) + dw(&f.image_dw) + lin(&f.event_proj) + dw(&f.event_dw)),
            ));
            out.push((
                "fusion",
                s + 1,
                2 * k_u * (scan_dir(&f.forward) + scan_dir(&f.backward)) + k_u * (lin(&f.mlp.fc1) + lin(&f.mlp.fc2)),
            ));
        }
    }
    out
}
