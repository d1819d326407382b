//! Node and graph encoders plus the inner-product adjacency decoder.
//!
//! Node input is `[X_v ‖ (P·X)_v]` with `P` the row-normalised adjacency, so
//! each node sees its own features and the weighted mean of its in-neighbours'
//! features. The node MLP is `2F → hidden → hidden` with ReLU and dropout in
//! between; the graph MLP maps the node mean `hidden → hidden → hidden`.
//!
//! Forward passes keep the activations needed for the hand-written backward
//! passes. Batches are processed stacked: the node MLP acts row-wise, so all
//! nodes of all graphs go through one matrix product.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::BrainGraph;
use crate::nn::{self, Linear, Parameters};
use crate::rng;

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DECODER_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub node_in: Linear,
    pub node_out: Linear,
    pub graph_in: Linear,
    pub graph_out: Linear,
    pub decoder: Linear,
    pub feature_count: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl EncoderParams {
    /// All-zero parameters of the same shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.fan_in(), l.fan_out());
        EncoderParams {
            node_in: z(&self.node_in),
            node_out: z(&self.node_out),
            graph_in: z(&self.graph_in),
            graph_out: z(&self.graph_out),
            decoder: z(&self.decoder),
            ..*self
        }
    }

    pub fn latent(&self) -> usize {
        self.decoder.fan_out()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("encoder");
        ck.set_meta("feature_count", self.feature_count);
        ck.set_meta("hidden", self.hidden);
        ck.set_meta("dropout", self.dropout);
        for (name, t) in self.tensors() {
            ck.push_tensor(name, t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("encoder")?;
        let linear = |name: &str| -> Result<Linear> {
            Ok(Linear {
                weight: ck.tensor(&format!("{name}.weight"))?.clone(),
                bias: ck.tensor(&format!("{name}.bias"))?.clone(),
            })
        };
        let params = EncoderParams {
            node_in: linear("node_in")?,
            node_out: linear("node_out")?,
            graph_in: linear("graph_in")?,
            graph_out: linear("graph_out")?,
            decoder: linear("decoder")?,
            feature_count: ck.meta("feature_count")?,
            hidden: ck.meta("hidden")?,
            dropout: ck.meta("dropout")?,
        };
        if params.node_in.fan_in() != 2 * params.feature_count || params.node_in.fan_out() != params.hidden {
            return Err(Error::Shape(
                "encoder checkpoint tensors disagree with its metadata".into(),
            ));
        }
        Ok(params)
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut out = Vec::new();
        for (name, l) in [
            ("node_in", &self.node_in),
            ("node_out", &self.node_out),
            ("graph_in", &self.graph_in),
            ("graph_out", &self.graph_out),
            ("decoder", &self.decoder),
        ] {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = Vec::new();
        for l in [
            &mut self.node_in,
            &mut self.node_out,
            &mut self.graph_in,
            &mut self.graph_out,
            &mut self.decoder,
        ] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }
}

pub fn init_encoder(feature_count: usize, hidden: usize, seed: u64) -> Result<EncoderParams> {
    if feature_count == 0 || hidden == 0 {
        return Err(Error::Parameter(format!(
            "encoder needs F ≥ 1 and hidden ≥ 1, got F={feature_count}, hidden={hidden}"
        )));
    }
    let mut r = rng::stream(seed, rng::tag::INIT, 0);
    Ok(EncoderParams {
        node_in: Linear::init(2 * feature_count, hidden, &mut r),
        node_out: Linear::init(hidden, hidden, &mut r),
        graph_in: Linear::init(hidden, hidden, &mut r),
        graph_out: Linear::init(hidden, hidden, &mut r),
        decoder: Linear::init(hidden, DECODER_DIM, &mut r),
        feature_count,
        hidden,
        dropout: DEFAULT_DROPOUT,
    })
}

/// `[X ‖ P·X]` with `P` the row-normalised adjacency (zero rows stay zero).
pub fn node_input(a: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Shape(format!(
            "adjacency {}×{} does not match {n} feature rows",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut p = a.clone();
    for mut row in p.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    let f = x.ncols();
    let mut out = DMatrix::zeros(n, 2 * f);
    out.columns_mut(0, f).copy_from(x);
    out.columns_mut(f, f).copy_from(&(p * x));
    Ok(out)
}

/// Activations of a node-MLP pass over stacked node inputs.
#[derive(Debug, Clone)]
pub struct NodePass {
    pub input: DMatrix<f64>,
    pre: DMatrix<f64>,
    /// `None` in eval mode.
    keep: Option<DMatrix<f64>>,
    hidden: DMatrix<f64>,
    pub output: DMatrix<f64>,
}

pub fn forward_nodes(params: &EncoderParams, input: DMatrix<f64>, dropout: Option<&mut rng::Rng>) -> NodePass {
    let pre = params.node_in.forward(&input);
    let mut hidden = nn::relu(&pre);
    let keep = match dropout {
        Some(r) if params.dropout > 0.0 => {
            let scale = 1.0 / (1.0 - params.dropout);
            let mask = DMatrix::from_fn(hidden.nrows(), hidden.ncols(), |_, _| {
                if r.random::<f64>() < params.dropout {
                    0.0
                } else {
                    scale
                }
            });
            hidden.component_mul_assign(&mask);
            Some(mask)
        }
        _ => None,
    };
    let output = params.node_out.forward(&hidden);
    NodePass {
        input,
        pre,
        keep,
        hidden,
        output,
    }
}

pub fn backward_nodes(params: &EncoderParams, pass: &NodePass, d_out: &DMatrix<f64>, grads: &mut EncoderParams) {
    let mut d_hidden = params.node_out.backward(&pass.hidden, d_out, &mut grads.node_out);
    if let Some(keep) = &pass.keep {
        d_hidden.component_mul_assign(keep);
    }
    let d_pre = nn::relu_backward(&pass.pre, &d_hidden);
    params.node_in.backward_params(&pass.input, &d_pre, &mut grads.node_in);
}

/// Row ranges of each graph inside a stacked node matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Offsets(pub Vec<usize>);

impl Offsets {
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut v = vec![0];
        for s in sizes {
            v.push(v.last().unwrap() + s);
        }
        Offsets(v)
    }

    pub fn len(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, g: usize) -> (usize, usize) {
        (self.0[g], self.0[g + 1] - self.0[g])
    }
}

#[derive(Debug, Clone)]
pub struct GraphPass {
    pooled: DMatrix<f64>,
    pre: DMatrix<f64>,
    hidden: DMatrix<f64>,
    /// `B × hidden`.
    pub output: DMatrix<f64>,
}

pub fn forward_graphs(params: &EncoderParams, h_node: &DMatrix<f64>, offsets: &Offsets) -> GraphPass {
    let mut pooled = DMatrix::zeros(offsets.len(), h_node.ncols());
    for g in 0..offsets.len() {
        let (start, n) = offsets.range(g);
        let mean = h_node.rows(start, n).row_mean();
        pooled.row_mut(g).copy_from(&mean);
    }
    let pre = params.graph_in.forward(&pooled);
    let hidden = nn::relu(&pre);
    let output = params.graph_out.forward(&hidden);
    GraphPass {
        pooled,
        pre,
        hidden,
        output,
    }
}

/// Returns the gradient with respect to the stacked node embeddings.
pub fn backward_graphs(
    params: &EncoderParams,
    pass: &GraphPass,
    d_out: &DMatrix<f64>,
    offsets: &Offsets,
    grads: &mut EncoderParams,
) -> DMatrix<f64> {
    let d_hidden = params.graph_out.backward(&pass.hidden, d_out, &mut grads.graph_out);
    let d_pre = nn::relu_backward(&pass.pre, &d_hidden);
    let d_pooled = params.graph_in.backward(&pass.pooled, &d_pre, &mut grads.graph_in);
    let mut d_nodes = DMatrix::zeros(*offsets.0.last().unwrap(), pass.pooled.ncols());
    for g in 0..offsets.len() {
        let (start, n) = offsets.range(g);
        let share = d_pooled.row(g) / n as f64;
        for r in start..start + n {
            d_nodes.row_mut(r).copy_from(&share);
        }
    }
    d_nodes
}

/// Node embeddings `N × hidden`; dropout is active only when `dropout` is given.
pub fn encode_nodes(
    params: &EncoderParams,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    dropout: Option<&mut rng::Rng>,
) -> Result<DMatrix<f64>> {
    if x.ncols() != params.feature_count {
        return Err(Error::Shape(format!(
            "encoder expects {} features, got {}",
            params.feature_count,
            x.ncols()
        )));
    }
    Ok(forward_nodes(params, node_input(a, x)?, dropout).output)
}

/// Graph embedding from the node mean.
pub fn encode_graph(params: &EncoderParams, h_node: &DMatrix<f64>) -> Result<DVector<f64>> {
    if h_node.nrows() == 0 {
        return Err(Error::Degenerate("cannot embed an empty graph".into()));
    }
    let pass = forward_graphs(params, h_node, &Offsets::from_sizes([h_node.nrows()]));
    Ok(pass.output.row(0).transpose())
}

/// `Â_ij = σ(z_i·z_j / √d_z)` with `z = decoder(H_node)`.
pub fn decode_adjacency(params: &EncoderParams, h_node: &DMatrix<f64>) -> DMatrix<f64> {
    let z = params.decoder.forward(h_node);
    let scale = 1.0 / (z.ncols() as f64).sqrt();
    let gram = &z * z.transpose();
    let n = gram.nrows();
    // evaluate each pair once so the result is exactly symmetric
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        nn::sigmoid(gram[(a, b)] * scale)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub node_embeddings: Vec<DMatrix<f64>>,
    /// `B × hidden`.
    pub graph_embeddings: DMatrix<f64>,
}

/// Eval-mode embeddings of a batch of graphs.
pub fn embed_graphs(params: &EncoderParams, graphs: &[&BrainGraph]) -> Result<EmbeddingBatch> {
    let (input, offsets) = stack_inputs(params, graphs)?;
    let nodes = forward_nodes(params, input, None);
    let graph_pass = forward_graphs(params, &nodes.output, &offsets);
    let node_embeddings = (0..offsets.len())
        .map(|g| {
            let (s, n) = offsets.range(g);
            nodes.output.rows(s, n).into_owned()
        })
        .collect();
    Ok(EmbeddingBatch {
        node_embeddings,
        graph_embeddings: graph_pass.output,
    })
}

/// Stacked node inputs of several graphs and their row offsets.
pub fn stack_inputs(params: &EncoderParams, graphs: &[&BrainGraph]) -> Result<(DMatrix<f64>, Offsets)> {
    let offsets = Offsets::from_sizes(graphs.iter().map(|g| g.n_nodes()));
    let mut input = DMatrix::zeros(*offsets.0.last().unwrap(), 2 * params.feature_count);
    for (k, g) in graphs.iter().enumerate() {
        if g.features.n_features() != params.feature_count {
            return Err(Error::Shape(format!(
                "encoder expects {} features, graph has {}",
                params.feature_count,
                g.features.n_features()
            )));
        }
        let (s, n) = offsets.range(k);
        input
            .rows_mut(s, n)
            .copy_from(&node_input(&g.adjacency, &g.features.values)?);
    }
    Ok((input, offsets))
}
