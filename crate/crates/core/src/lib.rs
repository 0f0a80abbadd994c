//! Event-guided token sparsification for RGB + event object detection
//! backbones.
//!
//! An event stream is validated, voxelized and summarized by its event
//! spatial ratio `r`. Both modalities are tokenized into four stages of token
//! grids. Before each stage, event-guided scoring produces a keep/drop map per
//! modality whose selectivity adapts to `r`; the maps drive sparse
//! selective-scan layers and the cross-modality fusion, and the analytic FLOP
//! report quantifies what the dropped tokens save.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cmff;
pub mod config;
pub mod egms;
pub mod error;
pub mod event;
pub mod flops;
pub mod netpbm;
pub mod nn;
pub mod pipeline;
pub mod ssm;
pub mod synth;
pub mod tokenize;
pub mod weights;

pub use config::ModelConfig;
pub use egms::{EgcmParams, EgmsOptions, ScoreMap, SparsificationMap};
pub use error::{Error, Result};
pub use event::{Event, EventStream, SensorGeometry, VoxelGrid};
pub use flops::FlopReport;
pub use pipeline::{run_backbone, run_backbone_dense, BackboneOutput, StageOutput};
pub use tokenize::TokenGrid;
pub use weights::{init_weights, ModelWeights};
