use std::path::Path;

use anyhow::{bail, Context, Result};
use rgbe_sparse::cmff::complement_mask;
use rgbe_sparse::event::{
    event_spatial_ratio_with_floor, read_events, validate_stream, voxelize as voxelize_stream, write_csv, write_evt1,
    DEFAULT_RATIO_FLOOR,
};
use rgbe_sparse::flops::cost_weighted_kept_ratio;
use rgbe_sparse::netpbm::{mask_to_pgm, read_image, write_pgm, write_ppm, GrayImage, RgbImage};
use rgbe_sparse::synth::{synth_scene, Complexity};
use rgbe_sparse::{init_weights, run_backbone, BackboneOutput, EventStream, ModelConfig, SensorGeometry};
use serde::Serialize;

use crate::manifest::{describe_input, ArtifactWriter};
use crate::{ModelArgs, WindowArgs};

pub const SEED_ENV: &str = "FOCUS_SEED";

fn load_stream(path: &Path, width: u32, height: u32, window: WindowArgs) -> Result<EventStream> {
    let events = read_events(path).with_context(|| format!("reading {}", path.display()))?;
    let geometry = SensorGeometry::new(width, height, window.window_start, window.window_end)?;
    validate_stream(events, geometry).with_context(|| format!("validating {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ModelConfig::from_toml(&text).with_context(|| format!("loading {}", p.display()))
        }
        None => Ok(ModelConfig::default()),
    }
}

/// Flag, then environment, then config file (whose default is 0).
fn resolve_seed(flag: Option<u64>, cfg: &ModelConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(std::env::VarError::NotPresent) => Ok(cfg.seed),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

struct Prepared {
    cfg: ModelConfig,
    image: RgbImage,
    stream: EventStream,
}

fn prepare(args: &ModelArgs) -> Result<Prepared> {
    let mut cfg = load_config(args.config.as_deref())?;
    cfg.seed = resolve_seed(args.seed, &cfg)?;
    let bytes = std::fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let image = read_image(&bytes).with_context(|| format!("reading {}", args.image.display()))?;
    let stream = load_stream(&args.events, image.width as u32, image.height as u32, args.window)?;
    Ok(Prepared { cfg, image, stream })
}

fn execute(p: &Prepared) -> Result<BackboneOutput> {
    let weights = init_weights(&p.cfg, p.cfg.seed);
    Ok(run_backbone(&p.image, &p.stream, &p.cfg, &weights)?)
}

pub fn voxelize(events: &Path, bins: usize, width: u32, height: u32, window: WindowArgs, out: &Path) -> Result<()> {
    let stream = load_stream(events, width, height, window)?;
    let grid = voxelize_stream(&stream, bins)?;
    std::fs::write(out, grid.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    let r = event_spatial_ratio_with_floor(&stream, DEFAULT_RATIO_FLOOR);
    println!("events={} r={r:.6} bins={bins} out={}", stream.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct KeptRatio {
    stage: usize,
    modality: &'static str,
    kept_ratio: f64,
    r: f64,
}

fn kept_ratios(out: &BackboneOutput) -> Vec<KeptRatio> {
    out.stages
        .iter()
        .flat_map(|s| {
            [
                KeptRatio {
                    stage: s.stage,
                    modality: "image",
                    kept_ratio: s.image_kept_ratio(),
                    r: out.ratio,
                },
                KeptRatio {
                    stage: s.stage,
                    modality: "event",
                    kept_ratio: s.event_kept_ratio(),
                    r: out.ratio,
                },
            ]
        })
        .collect()
}

fn write_masks(writer: &mut ArtifactWriter, out: &BackboneOutput) -> Result<()> {
    for s in &out.stages {
        writer.write(&format!("stage{}_image_mask.pgm", s.stage), &mask_to_pgm(&s.image_mask))?;
        writer.write(&format!("stage{}_event_mask.pgm", s.stage), &mask_to_pgm(&s.event_mask))?;
    }
    Ok(())
}

pub fn sparsify(args: &ModelArgs) -> Result<()> {
    let p = prepare(args)?;
    let out = execute(&p)?;
    let mut writer = ArtifactWriter::create(&args.out)?;
    write_masks(&mut writer, &out)?;
    writer.write_json("kept_ratios.json", &kept_ratios(&out))?;
    let inputs = vec![describe_input(&args.image)?, describe_input(&args.events)?];
    let config = args.config.as_deref().map(describe_input).transpose()?;
    writer.finish(inputs, config, p.cfg.seed)?;
    println!("r={:.6} mean_kept_ratio={:.6}", out.ratio, out.mean_kept_ratio());
    Ok(())
}

#[derive(Serialize)]
struct StageSummary {
    stage: usize,
    image_kept_ratio: f64,
    event_kept_ratio: f64,
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    r: f64,
    mean_kept_ratio: f64,
    cost_weighted_kept_ratio: f64,
    reduction_pct: f64,
    token_dependent_reduction_pct: f64,
    backbone_reduction_pct: f64,
    stages: Vec<StageSummary>,
}

#[derive(Serialize)]
struct Comparison {
    sparse_total_macs: u64,
    dense_baseline_total_macs: u64,
    reduction_pct: f64,
}

pub fn run(args: &ModelArgs, dense_baseline: bool) -> Result<()> {
    let p = prepare(args)?;
    let out = execute(&p)?;
    let mut writer = ArtifactWriter::create(&args.out)?;

    for s in &out.stages {
        writer.write(&format!("stage{}_image.bin", s.stage), &s.image.to_bytes())?;
        writer.write(&format!("stage{}_event.bin", s.stage), &s.event.to_bytes())?;
        if let Some(fused) = &s.fused {
            writer.write(&format!("stage{}_fused.bin", s.stage), &fused.to_bytes())?;
            let image_gain = complement_mask(&s.event_mask, &s.image_mask)?;
            let event_gain = complement_mask(&s.image_mask, &s.event_mask)?;
            writer.write(
                &format!("stage{}_image_enhanced.pgm", s.stage),
                &mask_to_pgm(&image_gain),
            )?;
            writer.write(
                &format!("stage{}_event_enhanced.pgm", s.stage),
                &mask_to_pgm(&event_gain),
            )?;
        }
    }
    write_masks(&mut writer, &out)?;
    writer.write_json("flops.json", &out.flops)?;
    let summary = RunSummary {
        seed: p.cfg.seed,
        r: out.ratio,
        mean_kept_ratio: out.mean_kept_ratio(),
        cost_weighted_kept_ratio: cost_weighted_kept_ratio(&p.cfg, &out.masks()),
        reduction_pct: out.flops.reduction_pct,
        token_dependent_reduction_pct: out.flops.token_dependent_reduction_pct,
        backbone_reduction_pct: out.flops.backbone_reduction_pct,
        stages: out
            .stages
            .iter()
            .map(|s| StageSummary {
                stage: s.stage,
                image_kept_ratio: s.image_kept_ratio(),
                event_kept_ratio: s.event_kept_ratio(),
            })
            .collect(),
    };
    writer.write_json("summary.json", &summary)?;

    if dense_baseline {
        let mut cfg = p.cfg.clone();
        cfg.dense_baseline = true;
        let base = execute(&Prepared {
            cfg,
            image: p.image.clone(),
            stream: p.stream.clone(),
        })?;
        writer.write_json("baseline_flops.json", &base.flops)?;
        let (sparse, dense) = (out.flops.total_sparse_macs, base.flops.total_sparse_macs);
        let reduction_pct = 100.0 * (1.0 - sparse as f64 / dense as f64);
        writer.write_json(
            "comparison.json",
            &Comparison {
                sparse_total_macs: sparse,
                dense_baseline_total_macs: dense,
                reduction_pct,
            },
        )?;
        println!("reduction_pct={reduction_pct:.4}");
    }

    let inputs = vec![describe_input(&args.image)?, describe_input(&args.events)?];
    let config = args.config.as_deref().map(describe_input).transpose()?;
    writer.finish(inputs, config, p.cfg.seed)?;
    println!(
        "r={:.6} mean_kept_ratio={:.6} token_dependent_reduction_pct={:.4}",
        out.ratio,
        out.mean_kept_ratio(),
        out.flops.token_dependent_reduction_pct
    );
    Ok(())
}

pub fn synth(seed: u64, complexity: Complexity, size: usize, out: &Path) -> Result<()> {
    if size == 0 || size > u16::MAX as usize {
        bail!("invalid parameter: size must lie in 1..=65535, got {size}");
    }
    let scene = synth_scene(seed, complexity, size, size);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = out.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    };
    write("image.ppm", &write_ppm(&scene.image))?;
    let mut csv = Vec::new();
    write_csv(&mut csv, scene.stream.events())?;
    write("events.csv", &csv)?;
    write("events.evt1", &write_evt1(scene.stream.events()))?;
    let mask = GrayImage {
        width: size,
        height: size,
        data: scene.object_mask.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    };
    write("object_mask.pgm", &write_pgm(&mask))?;
    let r = event_spatial_ratio_with_floor(&scene.stream, DEFAULT_RATIO_FLOOR);
    println!("complexity={complexity} events={} r={r:.6}", scene.stream.len());
    Ok(())
}
