//! Synthetic two-class graph datasets.
//!
//! The seizure-onset zone (SOZ) is the first `soz_size` nodes of every graph.
//! Interictal graphs carry strong directed edges into the SOZ and little
//! else; ictal graphs carry dense bidirectional edges everywhere. Both
//! classes get uniform edge noise before the usual top-quartile threshold.
//! Node features live in `[0, 1]`, with SOZ nodes raised in the spike and
//! HFO columns and ictal graphs raised across the board.

use nalgebra::DMatrix;
use rand::Rng;

use crate::biomarkers::{NodeFeatureMatrix, FEATURE_NAMES};
use crate::connectivity::{threshold_top_quartile, ConnectivityMatrix};
use crate::error::{Error, Result};
use crate::graph::BrainGraph;
use crate::rng;
use crate::signalio::Label;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub nodes: usize,
    pub soz_size: usize,
    /// Edge-noise level; also widens the feature jitter.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_class: 100,
            nodes: 20,
            soz_size: 4,
            noise: 0.3,
            seed: 0,
        }
    }
}

const INFLOW_P: f64 = 0.8;
const SPARSE_P: f64 = 0.05;
const ICTAL_P: f64 = 0.6;

fn adjacency(label: Label, n: usize, soz: usize, noise: f64, r: &mut rng::Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    match label {
        Label::Interictal => {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    if i < soz && j >= soz {
                        if r.random::<f64>() < INFLOW_P {
                            a[(i, j)] = r.random_range(0.6..1.0);
                        }
                    } else if r.random::<f64>() < SPARSE_P {
                        a[(i, j)] = r.random_range(0.1..0.3);
                    }
                }
            }
        }
        Label::Ictal => {
            for i in 0..n {
                for j in i + 1..n {
                    if r.random::<f64>() < ICTAL_P {
                        a[(i, j)] = r.random_range(0.4..0.9);
                        a[(j, i)] = r.random_range(0.4..0.9);
                    }
                }
            }
        }
    }
    if noise > 0.0 {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    a[(i, j)] += noise * r.random::<f64>();
                }
            }
        }
    }
    a
}

fn features(label: Label, n: usize, soz: usize, noise: f64, r: &mut rng::Rng) -> DMatrix<f64> {
    let jitter = 0.05 + 0.2 * noise;
    DMatrix::from_fn(n, FEATURE_NAMES.len(), |i, c| {
        let mut v = r.random_range(0.2..0.4);
        if i < soz && c < 2 {
            v += 0.3;
        }
        if label == Label::Ictal {
            v += 0.15;
        }
        (v + jitter * r.random_range(-1.0..1.0)).clamp(0.0, 1.0)
    })
}

/// One graph of the given class.
pub fn synth_graph(label: Label, spec: &SynthSpec, index: u64) -> Result<BrainGraph> {
    let mut r = rng::stream(spec.seed, rng::tag::SYNTH, index);
    let raw = adjacency(label, spec.nodes, spec.soz_size, spec.noise, &mut r);
    let kept = threshold_top_quartile(&ConnectivityMatrix::new(raw))?;
    let feats = NodeFeatureMatrix::standard(features(label, spec.nodes, spec.soz_size, spec.noise, &mut r))?;
    BrainGraph::new(kept.weights, feats, label)
}

/// `n_per_class` interictal graphs followed by as many ictal graphs.
pub fn synth_graph_dataset(spec: &SynthSpec) -> Result<Vec<BrainGraph>> {
    if spec.nodes < 2 || spec.soz_size == 0 || spec.soz_size >= spec.nodes {
        return Err(Error::Parameter(format!(
            "need 0 < soz_size < nodes and nodes ≥ 2, got soz_size={} nodes={}",
            spec.soz_size, spec.nodes
        )));
    }
    if spec.n_per_class == 0 {
        return Err(Error::Parameter("n_per_class must be positive".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise must be a nonnegative number, got {}",
            spec.noise
        )));
    }
    let mut out = Vec::with_capacity(2 * spec.n_per_class);
    for (c, label) in [Label::Interictal, Label::Ictal].into_iter().enumerate() {
        for k in 0..spec.n_per_class {
            out.push(synth_graph(label, spec, (c * spec.n_per_class + k) as u64)?);
        }
    }
    Ok(out)
}
