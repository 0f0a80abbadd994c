//! Seeded weight construction and the binary weight file.
//!
//! File layout (little-endian):
//!
//! ```text
//! b"WGT1"  u32 section_count
//! repeated: u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims, prod(dims) x f64
//! ```
//!
//! Sections appear in a fixed traversal order; names are dotted paths such as
//! `image.stage2.block0.scan.forward.a`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmff::FusionWeights;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{DepthwiseConv3, LayerNorm, Linear};
use crate::ssm::{LayerWeights, MlpWeights, ScanWeights, SsmParams};

pub const WEIGHT_MAGIC: &[u8; 4] = b"WGT1";

/// Weights of one modality backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights {
    pub embed: Linear,
    /// Merges into stages 2, 3 and 4.
    pub merges: Vec<Linear>,
    /// `layers[s][b]`: block `b` of stage `s + 1`.
    pub layers: Vec<Vec<LayerWeights>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub image: BackboneWeights,
    pub event: BackboneWeights,
    /// Fusion after stages 2, 3 and 4.
    pub fusion: Vec<FusionWeights>,
}

fn backbone(rng: &mut ChaCha8Rng, cfg: &ModelConfig, in_channels: usize) -> BackboneWeights {
    let c = cfg.channels;
    let embed = Linear::init(rng, in_channels * 16, c[0], true);
    let merges = (1..4).map(|s| Linear::init(rng, 4 * c[s - 1], c[s], false)).collect();
    let layers = (0..4)
        .map(|s| {
            (0..cfg.blocks[s])
                .map(|_| LayerWeights::init(rng, c[s], cfg.state_dim, cfg.mlp_ratio))
                .collect()
        })
        .collect();
    BackboneWeights { embed, merges, layers }
}

/// Deterministic weights for `cfg`: identical seeds give bit-identical weights.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = backbone(&mut rng, cfg, 3);
    let event = backbone(&mut rng, cfg, cfg.bins);
    let fusion = (1..4)
        .map(|s| FusionWeights::init(&mut rng, cfg.channels[s], cfg.state_dim, cfg.mlp_ratio))
        .collect();
    ModelWeights { image, event, fusion }
}

type Visit<'a> = dyn FnMut(String, Vec<usize>, &mut Vec<f64>) + 'a;

trait Tensors {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>);
}

impl Tensors for Linear {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        f(
            format!("{prefix}.weight"),
            vec![self.out_dim, self.in_dim],
            &mut self.weight,
        );
        if let Some(b) = &mut self.bias {
            f(format!("{prefix}.bias"), vec![self.out_dim], b);
        }
    }
}

impl Tensors for LayerNorm {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        let n = self.gain.len();
        f(format!("{prefix}.gain"), vec![n], &mut self.gain);
    }
}

impl Tensors for DepthwiseConv3 {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        f(format!("{prefix}.kernel"), vec![self.channels, 3, 3], &mut self.kernel);
    }
}

impl Tensors for SsmParams {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        f(format!("{prefix}.a"), vec![self.channels, self.state_dim], &mut self.a);
        self.b_proj.visit(&format!("{prefix}.b_proj"), f);
        self.c_proj.visit(&format!("{prefix}.c_proj"), f);
        self.dt_proj.visit(&format!("{prefix}.dt_proj"), f);
        f(format!("{prefix}.d"), vec![self.channels], &mut self.d);
    }
}

impl Tensors for MlpWeights {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        self.norm.visit(&format!("{prefix}.norm"), f);
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }
}

impl Tensors for ScanWeights {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        self.norm.visit(&format!("{prefix}.norm"), f);
        self.in_proj.visit(&format!("{prefix}.in_proj"), f);
        self.gate_proj.visit(&format!("{prefix}.gate_proj"), f);
        self.forward.visit(&format!("{prefix}.forward"), f);
        self.backward.visit(&format!("{prefix}.backward"), f);
        self.out_proj.visit(&format!("{prefix}.out_proj"), f);
    }
}

impl Tensors for FusionWeights {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        self.image_proj.visit(&format!("{prefix}.image_proj"), f);
        self.event_proj.visit(&format!("{prefix}.event_proj"), f);
        self.image_dw.visit(&format!("{prefix}.image_dw"), f);
        self.event_dw.visit(&format!("{prefix}.event_dw"), f);
        self.forward.visit(&format!("{prefix}.forward"), f);
        self.backward.visit(&format!("{prefix}.backward"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
    }
}

impl Tensors for BackboneWeights {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        self.embed.visit(&format!("{prefix}.embed"), f);
        for (s, m) in self.merges.iter_mut().enumerate() {
            m.visit(&format!("{prefix}.merge{}", s + 2), f);
        }
        for (s, blocks) in self.layers.iter_mut().enumerate() {
            for (b, layer) in blocks.iter_mut().enumerate() {
                let p = format!("{prefix}.stage{}.block{b}", s + 1);
                layer.scan.visit(&format!("{p}.scan"), f);
                layer.mlp.visit(&format!("{p}.mlp"), f);
            }
        }
    }
}

impl Tensors for ModelWeights {
    fn visit(&mut self, prefix: &str, f: &mut Visit<'_>) {
        let join = |name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        self.image.visit(&join("image"), f);
        self.event.visit(&join("event"), f);
        for (s, fw) in self.fusion.iter_mut().enumerate() {
            fw.visit(&join(&format!("fusion{}", s + 2)), f);
        }
    }
}

impl ModelWeights {
    /// `(name, shape)` of every section in file order.
    pub fn sections(&self) -> Vec<(String, Vec<usize>)> {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.visit("", &mut |name, shape, _| out.push((name, shape)));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.sections().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut copy = self.clone();
        let mut body = Vec::new();
        let mut count = 0u32;
        copy.visit("", &mut |name, shape, data| {
            count += 1;
            body.extend_from_slice(&(name.len() as u16).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.push(shape.len() as u8);
            for d in &shape {
                body.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in data.iter() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        });
        let mut out = WEIGHT_MAGIC.to_vec();
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Loads a weight file for `cfg`. Every section the config implies must be
    /// present with the expected name and shape, in file order.
    pub fn from_bytes(cfg: &ModelConfig, bytes: &[u8]) -> Result<Self> {
        let mut weights = init_weights(cfg, 0);
        if bytes.len() < 8 || &bytes[..4] != WEIGHT_MAGIC {
            return Err(Error::parse("offset 0", "missing WGT1 magic"));
        }
        let declared = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut pos = 8usize;
        let mut seen = 0usize;
        let mut failure: Option<Error> = None;
        weights.visit("", &mut |name, shape, data| {
            if failure.is_some() {
                return;
            }
            match read_section(bytes, &mut pos) {
                Ok((n, s, values)) if n == name && s == shape => {
                    *data = values;
                    seen += 1;
                }
                Ok((n, s, _)) => {
                    failure = Some(Error::parse(
                        format!("section {seen}"),
                        format!("found {n} {s:?}, expected {name} {shape:?}"),
                    ))
                }
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if seen != declared || pos != bytes.len() {
            return Err(Error::parse(
                format!("offset {pos}"),
                format!("file declares {declared} sections, config implies {seen}"),
            ));
        }
        Ok(weights)
    }
}

fn read_section(bytes: &[u8], pos: &mut usize) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let truncated = |at: usize| Error::parse(format!("offset {at}"), "weight file truncated");
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes.get(*pos..*pos + n).ok_or_else(|| truncated(*pos))?;
        *pos += n;
        Ok(s)
    };
    let name_len = u16::from_le_bytes(take(pos, 2)?.try_into().unwrap()) as usize;
    let name = String::from_utf8(take(pos, name_len)?.to_vec())
        .map_err(|_| Error::parse(format!("offset {pos}"), "section name is not utf-8"))?;
    let ndim = take(pos, 1)?[0] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize);
    }
    let n: usize = shape.iter().product();
    let values = take(pos, 8 * n)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, shape, values))
}
