//! Recording to labelled graphs.

use crate::biomarkers::node_feature_matrix;
use crate::config::PipelineConfig;
use crate::connectivity::multiband_graph;
use crate::error::Result;
use crate::graph::{build_graph, BrainGraph};
use crate::signalio::{clip_peri_ictal, segment_windows, Label, Recording, Segment};

pub fn graph_from_segment(seg: &Segment, cfg: &PipelineConfig) -> Result<BrainGraph> {
    let conn = multiband_graph(seg, &cfg.bands, cfg.mvar_order, cfg.dtf_normalized)?;
    build_graph(&conn, node_feature_matrix(seg)?, seg.label)
}

/// Clip around onset, window both sides, and build one graph per window:
/// interictal windows first, then ictal ones.
pub fn graphs_from_recording(rec: &Recording, cfg: &PipelineConfig) -> Result<Vec<BrainGraph>> {
    let (inter, ictal) = clip_peri_ictal(rec, cfg.pre_s, cfg.post_s)?;
    let mut segments = segment_windows(&inter, cfg.window_s, cfg.overlap, Label::Interictal)?;
    segments.extend(segment_windows(&ictal, cfg.window_s, cfg.overlap, Label::Ictal)?);
    segments.iter().map(|s| graph_from_segment(s, cfg)).collect()
}
