//! Seizure detection on directed functional-connectivity graphs.
//!
//! The crate covers the whole pipeline, bottom-up:
//!
//! ```text
//! Recording ──clip/window──▶ Segment ──MVAR/DTF──▶ ConnectivityMatrix ─┐
//!                               └──biomarkers──▶ NodeFeatureMatrix ─────┴─▶ BrainGraph
//! BrainGraph ──augment──▶ encoder ──▶ node/graph contrastive pretraining ──▶ EncoderParams
//! EncoderParams + BrainGraph ──▶ top-k GAT ──▶ seizure probability
//! ```
//!
//! Adjacency convention used everywhere: `adjacency[(i, j)]` is the weight of
//! the directed influence **from node `j` to node `i`** (rows are sinks),
//! which is the native orientation of the directed transfer function.

// NaN must fail parameter checks, hence the negated comparisons.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::manual_is_multiple_of,
    clippy::needless_range_loop
)]

pub mod biomarkers;
pub mod checkpoint;
pub mod config;
pub mod connectivity;
pub mod contrastive;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod gat;
pub mod graph;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod signalio;
pub mod synth;

pub use biomarkers::{node_feature_matrix, NodeFeatureMatrix, FEATURE_NAMES};
pub use config::PipelineConfig;
pub use connectivity::{
    band_dtf, fit_mvar, multiband_graph, threshold_top_quartile, transfer_matrix, ConnectivityMatrix, FrequencyBand,
    MvarModel,
};
pub use contrastive::{pretrain, PretrainConfig, PretrainOutcome, SigmaMode, SpectralSignature};
pub use encoder::{init_encoder, EmbeddingBatch, EncoderParams};
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{
    confusion_metrics, cross_validate, kfold_split, roc_auc, ConfusionCounts, CvConfig, CvReport, FoldReport, Metrics,
};
pub use gat::{finetune, init_gat, predict, AttentionMap, FinetuneConfig, GatParams};
pub use graph::{augment, AugmentationPolicy, BrainGraph};
pub use signalio::{Label, Recording, Segment};
