//! Prints per-scene event ratio, kept ratios and FLOP reduction over the
//! default synthetic suite.

use rgbe_sparse::egms::ScoreNormalization;
use rgbe_sparse::event::event_spatial_ratio;
use rgbe_sparse::synth::default_suite;
use rgbe_sparse::{init_weights, run_backbone, ModelConfig};

fn main() {
    let mut cfg = ModelConfig::default();
    if let Some(mode) = std::env::args().nth(1) {
        cfg.egcm.normalization = match mode.as_str() {
            "none" => ScoreNormalization::None,
            "range" => ScoreNormalization::Range,
            _ => ScoreNormalization::Max,
        };
    }
    if let Some(rho) = std::env::args().nth(2) {
        cfg.egcm.rho = rho.parse().unwrap();
    }
    let weights = init_weights(&cfg, cfg.seed);
    let mut reductions = Vec::new();
    for scene in default_suite(0, cfg.width, cfg.height) {
        let out = run_backbone(&scene.image, &scene.stream, &cfg, &weights).unwrap();
        let per_stage: Vec<String> = out
            .stages
            .iter()
            .map(|s| format!("{:.2}/{:.2}", s.image_kept_ratio(), s.event_kept_ratio()))
            .collect();
        println!(
            "{:<7} r={:.3} mean_kept={:.3} stages(img/evt)=[{}] token_dep_red={:.1}%",
            scene.complexity.to_string(),
            event_spatial_ratio(&scene.stream),
            out.mean_kept_ratio(),
            per_stage.join(" "),
            out.flops.token_dependent_reduction_pct
        );
        reductions.push(out.flops.token_dependent_reduction_pct);
    }
    let mean = reductions.iter().sum::<f64>() / reductions.len() as f64;
    println!("mean token-dependent reduction: {mean:.1}%");
}
