//! Four-stage two-backbone forward pass.
//!
//! Both modalities are tokenized at stride 4 and downsampled by 2x2 merges
//! between stages. At each stage entry the sparsification maps are computed
//! once and govern every Sparse VSS layer of that stage. Fusion runs after
//! stages 2, 3 and 4 as a side output; each backbone continues on its own
//! features.

use crate::cmff::{cmff, cmff_dense};
use crate::config::ModelConfig;
use crate::egms::{egms_stage, EgmsOutput, SparsificationMap};
use crate::error::{Error, Result};
use crate::event::{event_spatial_ratio_with_floor, voxelize, EventStream};
use crate::flops::{FlopReport, StageMasks};
use crate::netpbm::RgbImage;
use crate::ssm::{sparse_vss_block, vss_block_dense};
use crate::tokenize::{patch_embed, patch_merge, Planes, TokenGrid};
use crate::weights::ModelWeights;

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutput {
    pub stage: usize,
    pub image: TokenGrid,
    pub event: TokenGrid,
    /// Present for stages 2-4.
    pub fused: Option<TokenGrid>,
    pub image_mask: SparsificationMap,
    pub event_mask: SparsificationMap,
    /// Scores and factors behind the masks; absent when masks were forced.
    pub egms: Option<EgmsOutput>,
}

impl StageOutput {
    pub fn image_kept_ratio(&self) -> f64 {
        self.image_mask.kept_ratio()
    }

    pub fn event_kept_ratio(&self) -> f64 {
        self.event_mask.kept_ratio()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneOutput {
    pub ratio: f64,
    pub stages: Vec<StageOutput>,
    pub flops: FlopReport,
}

impl BackboneOutput {
    pub fn masks(&self) -> Vec<StageMasks> {
        self.stages
            .iter()
            .map(|s| StageMasks {
                image: s.image_mask.clone(),
                event: s.event_mask.clone(),
            })
            .collect()
    }

    /// Plain mean of the eight per-stage, per-modality kept ratios.
    pub fn mean_kept_ratio(&self) -> f64 {
        let total: f64 = self
            .stages
            .iter()
            .map(|s| s.image_kept_ratio() + s.event_kept_ratio())
            .sum();
        total / (2 * self.stages.len()) as f64
    }
}

fn check_inputs(image: &RgbImage, stream: &EventStream, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    if image.width != cfg.width || image.height != cfg.height {
        return Err(Error::ShapeMismatch(format!(
            "image is {}x{}, config expects {}x{}",
            image.width, image.height, cfg.width, cfg.height
        )));
    }
    let g = stream.geometry();
    if g.width as usize != cfg.width || g.height as usize != cfg.height {
        return Err(Error::ShapeMismatch(format!(
            "event sensor is {}x{}, config expects {}x{}",
            g.width, g.height, cfg.width, cfg.height
        )));
    }
    Ok(())
}

fn embed_inputs(
    image: &RgbImage,
    stream: &EventStream,
    cfg: &ModelConfig,
    w: &ModelWeights,
) -> Result<(TokenGrid, TokenGrid)> {
    let voxels = voxelize(stream, cfg.bins)?;
    let img_tokens = patch_embed(&image.to_planes(), 4, &w.image.embed)?;
    let evt_tokens = patch_embed(&Planes::from(&voxels), 4, &w.event.embed)?;
    Ok((img_tokens, evt_tokens))
}

/// Mask-guided forward pass. With `cfg.dense_baseline` every mask is forced
/// to all ones and the same sparse kernels run on every token.
pub fn run_backbone(
    image: &RgbImage,
    stream: &EventStream,
    cfg: &ModelConfig,
    weights: &ModelWeights,
) -> Result<BackboneOutput> {
    check_inputs(image, stream, cfg)?;
    let ratio = event_spatial_ratio_with_floor(stream, cfg.egcm.epsilon_r);
    let options = cfg.egms_options();
    let (mut img, mut evt) = embed_inputs(image, stream, cfg, weights)?;
    let mut stages = Vec::with_capacity(4);

    for stage in cfg.stages() {
        let s = stage.stage_index - 1;
        if s > 0 {
            img = patch_merge(&img, &weights.image.merges[s - 1])?;
            evt = patch_merge(&evt, &weights.event.merges[s - 1])?;
        }
        let (image_mask, event_mask, egms) = if cfg.dense_baseline {
            let ones = SparsificationMap::ones(img.hs, img.ws);
            (ones.clone(), ones, None)
        } else {
            let out = egms_stage(&img, &evt, stream, &stage, &options, ratio)?;
            (out.image_mask.clone(), out.event_mask.clone(), Some(out))
        };
        for layer in &weights.image.layers[s] {
            img = sparse_vss_block(&img, &image_mask, layer)?;
        }
        for layer in &weights.event.layers[s] {
            evt = sparse_vss_block(&evt, &event_mask, layer)?;
        }
        let fused = if s > 0 {
            Some(cmff(
                &img,
                &evt,
                &image_mask,
                &event_mask,
                &weights.fusion[s - 1],
                cfg.beta,
            )?)
        } else {
            None
        };
        stages.push(StageOutput {
            stage: stage.stage_index,
            image: img.clone(),
            event: evt.clone(),
            fused,
            image_mask,
            event_mask,
            egms,
        });
    }

    let masks: Vec<StageMasks> = stages
        .iter()
        .map(|s| StageMasks {
            image: s.image_mask.clone(),
            event: s.event_mask.clone(),
        })
        .collect();
    Ok(BackboneOutput {
        ratio,
        flops: FlopReport::count(cfg, &masks),
        stages,
    })
}

/// Reference forward pass with dense kernels only: no gather, no scatter, no
/// enhancement. Agrees with [`run_backbone`] under all-ones masks.
pub fn run_backbone_dense(
    image: &RgbImage,
    stream: &EventStream,
    cfg: &ModelConfig,
    weights: &ModelWeights,
) -> Result<BackboneOutput> {
    check_inputs(image, stream, cfg)?;
    let ratio = event_spatial_ratio_with_floor(stream, cfg.egcm.epsilon_r);
    let (mut img, mut evt) = embed_inputs(image, stream, cfg, weights)?;
    let mut stages = Vec::with_capacity(4);
    for stage in cfg.stages() {
        let s = stage.stage_index - 1;
        if s > 0 {
            img = patch_merge(&img, &weights.image.merges[s - 1])?;
            evt = patch_merge(&evt, &weights.event.merges[s - 1])?;
        }
        for layer in &weights.image.layers[s] {
            img = vss_block_dense(&img, layer);
        }
        for layer in &weights.event.layers[s] {
            evt = vss_block_dense(&evt, layer);
        }
        let fused = if s > 0 {
            Some(cmff_dense(&img, &evt, &weights.fusion[s - 1])?)
        } else {
            None
        };
        let ones = SparsificationMap::ones(img.hs, img.ws);
        stages.push(StageOutput {
            stage: stage.stage_index,
            image: img.clone(),
            event: evt.clone(),
            fused,
            image_mask: ones.clone(),
            event_mask: ones,
            egms: None,
        });
    }
    let masks: Vec<StageMasks> = stages
        .iter()
        .map(|s| StageMasks {
            image: s.image_mask.clone(),
            event: s.event_mask.clone(),
        })
        .collect();
    Ok(BackboneOutput {
        ratio,
        flops: FlopReport::count(cfg, &masks),
        stages,
    })
}
