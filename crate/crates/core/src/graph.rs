//! Labelled brain graphs and centrality-guided augmentation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::biomarkers::NodeFeatureMatrix;
use crate::connectivity::ConnectivityMatrix;
use crate::error::{Error, Result};
use crate::signalio::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct BrainGraph {
    /// `N × N`, nonnegative, zero diagonal; `(i, j)` is the edge `j → i`.
    pub adjacency: DMatrix<f64>,
    pub features: NodeFeatureMatrix,
    pub label: Label,
}

impl BrainGraph {
    pub fn new(adjacency: DMatrix<f64>, features: NodeFeatureMatrix, label: Label) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(Error::Shape(format!("adjacency is {}×{}", n, adjacency.ncols())));
        }
        if features.n_nodes() != n {
            return Err(Error::Shape(format!(
                "adjacency has {n} nodes but features have {} rows",
                features.n_nodes()
            )));
        }
        if adjacency.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invariant("edge weights must be finite and nonnegative".into()));
        }
        if (0..n).any(|i| adjacency[(i, i)] != 0.0) {
            return Err(Error::Invariant("self-connections must be zero".into()));
        }
        Ok(BrainGraph {
            adjacency,
            features,
            label,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }
}

pub fn build_graph(conn: &ConnectivityMatrix, feats: NodeFeatureMatrix, label: Label) -> Result<BrainGraph> {
    BrainGraph::new(conn.weights.clone(), feats, label)
}

/// Weighted total degree, in plus out.
pub fn degree_centrality(g: &BrainGraph) -> DVector<f64> {
    let a = &g.adjacency;
    DVector::from_fn(g.n_nodes(), |i, _| a.row(i).sum() + a.column(i).sum())
}

/// Min-max scaling to `[0, 1]`; all-equal input maps to 0.5.
pub fn normalize_importance(c: &DVector<f64>) -> DVector<f64> {
    if c.is_empty() {
        return c.clone();
    }
    let lo = c.min();
    let hi = c.max();
    if hi > lo {
        c.map(|v| (v - lo) / (hi - lo))
    } else {
        DVector::from_element(c.len(), 0.5)
    }
}

const SAMPLING_FLOOR: f64 = 1e-6;

/// Draws `k` distinct indices, sequentially, with probability proportional
/// to `weights` among those not yet drawn.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k.min(weights.len()) {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            if u < weights[i] {
                pick = pos;
                break;
            }
            u -= weights[i];
        }
        chosen.push(remaining.remove(pick));
    }
    chosen
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "augmentation ratio must lie in [0, 1), got {ratio}"
        )))
    }
}

/// Masks `floor(ratio · N)` nodes, favouring low importance, by zeroing their
/// rows and columns. Features are untouched.
pub fn mask_nodes<R: Rng + ?Sized>(
    g: &BrainGraph,
    c_norm: &DVector<f64>,
    ratio: f64,
    rng: &mut R,
) -> Result<(BrainGraph, Vec<usize>)> {
    check_ratio(ratio)?;
    let n = g.n_nodes();
    if c_norm.len() != n {
        return Err(Error::Shape(format!("{} importances for {n} nodes", c_norm.len())));
    }
    let count = (ratio * n as f64).floor() as usize;
    let mut out = g.clone();
    if count == 0 {
        return Ok((out, Vec::new()));
    }
    let weights: Vec<f64> = c_norm.iter().map(|c| (1.0 - c) + SAMPLING_FLOOR).collect();
    let mut masked = weighted_sample_without_replacement(&weights, count, rng);
    for &v in &masked {
        out.adjacency.row_mut(v).fill(0.0);
        out.adjacency.column_mut(v).fill(0.0);
    }
    masked.sort_unstable();
    Ok((out, masked))
}

/// Unordered pairs `{i, j}` (`i < j`) carrying any nonzero weight.
pub fn edge_pairs(adjacency: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = adjacency.nrows();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if adjacency[(i, j)] != 0.0 || adjacency[(j, i)] != 0.0 {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Deletes `floor(ratio · E_pairs)` node pairs, favouring pairs whose mean
/// endpoint importance is low. Both directions of a chosen pair are zeroed.
pub fn perturb_edges<R: Rng + ?Sized>(
    g: &BrainGraph,
    c_norm: &DVector<f64>,
    ratio: f64,
    rng: &mut R,
) -> Result<(BrainGraph, Vec<(usize, usize)>)> {
    check_ratio(ratio)?;
    if c_norm.len() != g.n_nodes() {
        return Err(Error::Shape(format!(
            "{} importances for {} nodes",
            c_norm.len(),
            g.n_nodes()
        )));
    }
    let pairs = edge_pairs(&g.adjacency);
    let count = (ratio * pairs.len() as f64).floor() as usize;
    let mut out = g.clone();
    if count == 0 {
        return Ok((out, Vec::new()));
    }
    let weights: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| (1.0 - (c_norm[i] + c_norm[j]) / 2.0) + SAMPLING_FLOOR)
        .collect();
    let mut chosen: Vec<(usize, usize)> = weighted_sample_without_replacement(&weights, count, rng)
        .into_iter()
        .map(|k| pairs[k])
        .collect();
    for &(i, j) in &chosen {
        out.adjacency[(i, j)] = 0.0;
        out.adjacency[(j, i)] = 0.0;
    }
    chosen.sort_unstable();
    Ok((out, chosen))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationPolicy {
    pub node_mask_ratio: f64,
    pub edge_perturb_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            node_mask_ratio: 0.2,
            edge_perturb_ratio: 0.2,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        check_ratio(self.node_mask_ratio)?;
        check_ratio(self.edge_perturb_ratio)
    }
}

/// What an augmentation removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentationTrace {
    pub masked_nodes: Vec<usize>,
    pub perturbed_pairs: Vec<(usize, usize)>,
    /// Pair count of the masked graph the edge step sampled from.
    pub candidate_pairs: usize,
}

/// Node masking followed by edge perturbation, with centralities recomputed
/// on the masked graph.
pub fn augment_traced<R: Rng + ?Sized>(
    g: &BrainGraph,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<(BrainGraph, AugmentationTrace)> {
    policy.validate()?;
    let c_norm = normalize_importance(&degree_centrality(g));
    let (masked, masked_nodes) = mask_nodes(g, &c_norm, policy.node_mask_ratio, rng)?;
    let c_norm = normalize_importance(&degree_centrality(&masked));
    let candidate_pairs = edge_pairs(&masked.adjacency).len();
    let (out, perturbed_pairs) = perturb_edges(&masked, &c_norm, policy.edge_perturb_ratio, rng)?;
    Ok((
        out,
        AugmentationTrace {
            masked_nodes,
            perturbed_pairs,
            candidate_pairs,
        },
    ))
}

pub fn augment<R: Rng + ?Sized>(g: &BrainGraph, policy: &AugmentationPolicy, rng: &mut R) -> Result<BrainGraph> {
    augment_traced(g, policy, rng).map(|(g, _)| g)
}
