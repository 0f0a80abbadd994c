//! Analytic operation counts for the two-backbone model, dense versus sparse.
//!
//! Counts are multiply-accumulates; one MAC is two FLOPs. A linear map on
//! `n` tokens costs `n * in * out` MACs. One scan direction costs, per token,
//! the `B`/`C` projections (`2 * E * Ds`), the step projection (`E * E`), three
//! MACs per channel and state (decay, input drive, readout) and two per
//! channel (step times input, skip). Normalizations and activations are not
//! counted. Sparse counts replace the token count with the number of kept
//! tokens wherever the computation runs on gathered tokens only.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::egms::SparsificationMap;

pub const FLOPS_PER_MAC: u64 = 2;

pub const COMPONENTS: [&str; 6] = ["embed", "projections", "scan", "mlp", "fusion_pre", "fusion"];

/// Components whose cost scales with the kept token count.
pub const TOKEN_DEPENDENT: [&str; 4] = ["projections", "scan", "mlp", "fusion"];

/// Backbone components that run on exactly one modality mask.
pub const BACKBONE_TOKEN_LINEAR: [&str; 3] = ["projections", "scan", "mlp"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopEntry {
    pub stage: usize,
    pub component: String,
    pub dense_macs: u64,
    pub sparse_macs: u64,
    pub reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub convention: String,
    pub flops_per_mac: u64,
    pub entries: Vec<FlopEntry>,
    pub total_dense_macs: u64,
    pub total_sparse_macs: u64,
    pub reduction_pct: f64,
    pub token_dependent_reduction_pct: f64,
    pub backbone_reduction_pct: f64,
}

/// Masks governing one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageMasks {
    pub image: SparsificationMap,
    pub event: SparsificationMap,
}

fn pct(dense: u64, sparse: u64) -> f64 {
    if dense == 0 {
        0.0
    } else {
        100.0 * (1.0 - sparse as f64 / dense as f64)
    }
}

/// MACs of one scan direction per token with `e` channels and state `ds`.
pub fn scan_macs_per_token(e: u64, ds: u64) -> u64 {
    2 * e * ds + e * e + 3 * e * ds + 2 * e
}

/// Per-token MACs of one Sparse VSS layer at `c` channels.
fn layer_costs(cfg: &ModelConfig, c: u64) -> (u64, u64, u64) {
    let ds = cfg.state_dim as u64;
    let hidden = c * cfg.mlp_ratio as u64;
    let projections = 3 * c * c;
    let scan = 2 * scan_macs_per_token(c, ds);
    let mlp = 2 * c * hidden;
    (projections, scan, mlp)
}

impl FlopReport {
    /// Analytic counts for `cfg` under per-stage masks (stage order 1..=4).
    pub fn count(cfg: &ModelConfig, masks: &[StageMasks]) -> FlopReport {
        assert_eq!(masks.len(), 4, "one mask pair per stage");
        let mut entries = Vec::new();
        let ds = cfg.state_dim as u64;
        for (s, m) in masks.iter().enumerate() {
            let stage = s + 1;
            let (hs, ws) = cfg.grid_size(stage);
            let n = (hs * ws) as u64;
            assert_eq!(m.image.len() as u64, n, "stage {stage} image mask length");
            assert_eq!(m.event.len() as u64, n, "stage {stage} event mask length");
            let c = cfg.channels[s] as u64;
            let (k_i, k_e) = (m.image.kept_count() as u64, m.event.kept_count() as u64);
            let blocks = cfg.blocks[s] as u64;

            let embed = if s == 0 {
                n * (3 * 16) * c + n * (cfg.bins as u64 * 16) * c
            } else {
                2 * n * 4 * cfg.channels[s - 1] as u64 * c
            };
            let mut push = |component: &str, dense: u64, sparse: u64| {
                entries.push(FlopEntry {
                    stage,
                    component: component.to_string(),
                    dense_macs: dense,
                    sparse_macs: sparse,
                    reduction_pct: pct(dense, sparse),
                });
            };
            push("embed", embed, embed);

            let (proj, scan, mlp) = layer_costs(cfg, c);
            push("projections", blocks * 2 * n * proj, blocks * (k_i + k_e) * proj);
            push("scan", blocks * 2 * n * scan, blocks * (k_i + k_e) * scan);
            push("mlp", blocks * 2 * n * mlp, blocks * (k_i + k_e) * mlp);

            if s == 0 {
                push("fusion_pre", 0, 0);
                push("fusion", 0, 0);
            } else {
                let pre = 2 * n * (c * c + 9 * c);
                push("fusion_pre", pre, pre);
                let k_u = m
                    .image
                    .bits()
                    .iter()
                    .zip(m.event.bits())
                    .filter(|(&a, &b)| a | b)
                    .count() as u64;
                let per_scan_token = 2 * scan_macs_per_token(c, ds);
                let per_mlp_token = 2 * c * c * cfg.mlp_ratio as u64;
                push(
                    "fusion",
                    2 * n * per_scan_token + n * per_mlp_token,
                    2 * k_u * per_scan_token + k_u * per_mlp_token,
                );
            }
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<FlopEntry>) -> FlopReport {
        let sum = |filter: &dyn Fn(&FlopEntry) -> bool| -> (u64, u64) {
            entries
                .iter()
                .filter(|e| filter(e))
                .fold((0, 0), |(d, s), e| (d + e.dense_macs, s + e.sparse_macs))
        };
        let (td, ts) = sum(&|_| true);
        let (dd, ds) = sum(&|e| TOKEN_DEPENDENT.contains(&e.component.as_str()));
        let (bd, bs) = sum(&|e| BACKBONE_TOKEN_LINEAR.contains(&e.component.as_str()));
        FlopReport {
            convention: "multiply-accumulates; FLOPs = 2 x MACs".to_string(),
            flops_per_mac: FLOPS_PER_MAC,
            entries,
            total_dense_macs: td,
            total_sparse_macs: ts,
            reduction_pct: pct(td, ts),
            token_dependent_reduction_pct: pct(dd, ds),
            backbone_reduction_pct: pct(bd, bs),
        }
    }

    pub fn component_total(&self, component: &str) -> (u64, u64) {
        self.entries
            .iter()
            .filter(|e| e.component == component)
            .fold((0, 0), |(d, s), e| (d + e.dense_macs, s + e.sparse_macs))
    }

    pub fn total_dense_flops(&self) -> u64 {
        self.total_dense_macs * FLOPS_PER_MAC
    }

    pub fn total_sparse_flops(&self) -> u64 {
        self.total_sparse_macs * FLOPS_PER_MAC
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Kept ratio averaged over stages and modalities, weighted by each
/// (stage, modality) pair's dense backbone cost. The backbone reduction
/// equals one minus this value.
pub fn cost_weighted_kept_ratio(cfg: &ModelConfig, masks: &[StageMasks]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, m) in masks.iter().enumerate() {
        let (proj, scan, mlp) = layer_costs(cfg, cfg.channels[s] as u64);
        let per_token = (cfg.blocks[s] as u64 * (proj + scan + mlp)) as f64;
        for mask in [&m.image, &m.event] {
            num += per_token * mask.kept_count() as f64;
            den += per_token * mask.len() as f64;
        }
    }
    num / den
}
