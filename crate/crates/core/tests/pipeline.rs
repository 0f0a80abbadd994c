mod common;

use rgbe_sparse::event::{event_spatial_ratio, read_csv, read_evt1, write_csv, write_evt1};
use rgbe_sparse::synth::{default_suite, object_boundary, synth_scene, tokens_touching, Complexity};
use rgbe_sparse::weights::ModelWeights;
use rgbe_sparse::{init_weights, run_backbone, ModelConfig};

#[test]
fn boundary_tokens_survive_stage_two() {
    let cfg = ModelConfig::default();
    let w = init_weights(&cfg, 0);
    let (mut hit, mut total) = (0usize, 0usize);
    for scene in default_suite(100, 64, 64) {
        let out = run_backbone(&scene.image, &scene.stream, &cfg, &w).unwrap();
        let boundary = object_boundary(&scene.object_mask, 64, 64);
        let touched = tokens_touching(&boundary, 64, 64, 8);
        let mask = &out.stages[1].event_mask;
        for (k, &t) in touched.iter().enumerate() {
            if t {
                total += 1;
                hit += mask.is_kept(k) as usize;
            }
        }
    }
    let recall = hit as f64 / total as f64;
    assert!(recall >= 0.9, "recall {recall:.3} over {total} boundary tokens");
}

#[test]
fn forward_pass_is_deterministic_and_finite() {
    let cfg = ModelConfig::default();
    let scene = synth_scene(5, Complexity::Dense, 64, 64);
    let a = run_backbone(&scene.image, &scene.stream, &cfg, &init_weights(&cfg, 9)).unwrap();
    let b = run_backbone(&scene.image, &scene.stream, &cfg, &init_weights(&cfg, 9)).unwrap();
    assert_eq!(a, b);
    for s in &a.stages {
        assert!(s.image.is_finite() && s.event.is_finite());
        assert_eq!(s.image_mask.bits(), s.egms.as_ref().unwrap().image_mask.bits());
    }
}

#[test]
fn stage_one_override_can_be_disabled() {
    let scene = synth_scene(2, Complexity::Medium, 64, 64);
    let on = ModelConfig::default();
    let off = ModelConfig {
        stage1_override: false,
        ..ModelConfig::default()
    };
    let w = init_weights(&on, 0);
    let a = run_backbone(&scene.image, &scene.stream, &on, &w).unwrap();
    let b = run_backbone(&scene.image, &scene.stream, &off, &w).unwrap();
    assert_eq!(a.stages[0].image_mask, a.stages[0].event_mask);
    assert_ne!(b.stages[0].image_mask, b.stages[0].event_mask);
}

#[test]
fn dense_baseline_reports_no_reduction() {
    let cfg = ModelConfig {
        dense_baseline: true,
        ..ModelConfig::default()
    };
    let scene = synth_scene(1, Complexity::Sparse, 64, 64);
    let out = run_backbone(&scene.image, &scene.stream, &cfg, &init_weights(&cfg, 0)).unwrap();
    assert_eq!(out.flops.reduction_pct, 0.0);
    assert_eq!(out.mean_kept_ratio(), 1.0);
}

#[test]
fn weights_are_seeded_and_round_trip() {
    let cfg = ModelConfig::default();
    let a = init_weights(&cfg, 1);
    assert_eq!(a, init_weights(&cfg, 1));
    let bytes = a.to_bytes();
    assert_ne!(bytes, init_weights(&cfg, 2).to_bytes());
    assert_eq!(ModelWeights::from_bytes(&cfg, &bytes).unwrap(), a);
    assert_eq!(
        a.image.layers.iter().map(Vec::len).collect::<Vec<_>>(),
        cfg.blocks.to_vec()
    );
    for (s, layers) in a.event.layers.iter().enumerate() {
        for l in layers {
            assert_eq!(l.scan.in_proj.in_dim, cfg.channels[s]);
            assert_eq!(l.scan.forward.state_dim, cfg.state_dim);
        }
    }
    assert_eq!(a.event.embed.in_dim, cfg.bins * 16);
    let total: usize = a
        .sections()
        .iter()
        .map(|(_, dims)| dims.iter().product::<usize>())
        .sum();
    assert_eq!(total, a.parameter_count());
}

#[test]
fn synthetic_scene_files_re_ingest() {
    for c in [Complexity::Sparse, Complexity::Medium, Complexity::Dense] {
        let scene = synth_scene(77, c, 64, 64);
        let mut csv = Vec::new();
        write_csv(&mut csv, scene.stream.events()).unwrap();
        assert_eq!(read_csv(csv.as_slice()).unwrap(), scene.stream.events());
        assert_eq!(
            read_evt1(&write_evt1(scene.stream.events())).unwrap(),
            scene.stream.events()
        );
    }
}

#[test]
fn suite_spans_the_ratio_range() {
    let ratios: Vec<f64> = default_suite(100, 64, 64)
        .iter()
        .map(|s| event_spatial_ratio(&s.stream))
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    assert!(lo < 0.05 && hi > 0.2, "r in [{lo}, {hi}]");
}
