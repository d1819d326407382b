//! Top-k localized multi-head graph attention classifier.
//!
//! Each node attends over its candidate set: every node it shares an edge
//! with in either direction, plus itself. Per head only the `k` highest
//! scoring candidates survive (the rest are masked to −∞ before the
//! softmax), with `k = max(1, round(neighbor_rate·N))`. Heads are
//! concatenated; ELU sits between layers and the last layer is linear. The
//! readout is the node mean followed by a logistic unit.

use nalgebra::DMatrix;
use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::encoder::{self, EncoderParams, Offsets};
use crate::error::{Error, Result};
use crate::graph::BrainGraph;
use crate::nn::{self, Adam, Linear, Parameters};
use crate::rng;
use crate::signalio::Label;

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_EMBED: usize = 16;
pub const DEFAULT_NEIGHBOR_RATE: f64 = 0.5;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    /// `d_in × heads·embed`; head `h` owns columns `h·embed..(h+1)·embed`.
    pub weight: DMatrix<f64>,
    /// `heads × embed`, scores the attending node.
    pub att_self: DMatrix<f64>,
    /// `heads × embed`, scores the attended neighbour.
    pub att_nbr: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub layers: Vec<GatLayer>,
    pub output: Linear,
    pub input_dim: usize,
    pub heads: usize,
    pub embed: usize,
    pub neighbor_rate: f64,
}

impl GatParams {
    pub fn width(&self) -> usize {
        self.heads * self.embed
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        GatParams {
            layers: self
                .layers
                .iter()
                .map(|l| GatLayer {
                    weight: z(&l.weight),
                    att_self: z(&l.att_self),
                    att_nbr: z(&l.att_nbr),
                })
                .collect(),
            output: Linear::zeros(self.output.fan_in(), self.output.fan_out()),
            ..*self
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("gat");
        ck.set_meta("input_dim", self.input_dim);
        ck.set_meta("layers", self.layers.len());
        ck.set_meta("heads", self.heads);
        ck.set_meta("embed", self.embed);
        ck.set_meta("neighbor_rate", self.neighbor_rate);
        for (name, t) in self.tensors() {
            ck.push_tensor(name, t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("gat")?;
        let n_layers: usize = ck.meta("layers")?;
        let layers = (0..n_layers)
            .map(|l| {
                Ok(GatLayer {
                    weight: ck.tensor(&format!("layer{l}.weight"))?.clone(),
                    att_self: ck.tensor(&format!("layer{l}.att_self"))?.clone(),
                    att_nbr: ck.tensor(&format!("layer{l}.att_nbr"))?.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = GatParams {
            layers,
            output: Linear {
                weight: ck.tensor("output.weight")?.clone(),
                bias: ck.tensor("output.bias")?.clone(),
            },
            input_dim: ck.meta("input_dim")?,
            heads: ck.meta("heads")?,
            embed: ck.meta("embed")?,
            neighbor_rate: ck.meta("neighbor_rate")?,
        };
        let width = params.width();
        let consistent = params.layers.iter().enumerate().all(|(l, layer)| {
            let d_in = if l == 0 { params.input_dim } else { width };
            layer.weight.shape() == (d_in, width)
                && layer.att_self.shape() == (params.heads, params.embed)
                && layer.att_nbr.shape() == (params.heads, params.embed)
        }) && params.output.weight.shape() == (width, 1);
        if !consistent || params.layers.is_empty() {
            return Err(Error::Shape("GAT checkpoint tensors disagree with its metadata".into()));
        }
        Ok(params)
    }
}

impl Parameters for GatParams {
    fn tensors(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), &layer.weight));
            out.push((format!("layer{l}.att_self"), &layer.att_self));
            out.push((format!("layer{l}.att_nbr"), &layer.att_nbr));
        }
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.att_self);
            out.push(&mut layer.att_nbr);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed: usize,
    pub neighbor_rate: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Update the encoder jointly with the classifier.
    pub finetune_encoder: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            layers: DEFAULT_LAYERS,
            heads: DEFAULT_HEADS,
            embed: DEFAULT_EMBED,
            neighbor_rate: DEFAULT_NEIGHBOR_RATE,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 50,
            finetune_encoder: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.embed == 0 || self.batch_size == 0 {
            return Err(Error::Parameter(
                "GAT layers, heads, embed and batch size must be positive".into(),
            ));
        }
        if !(self.neighbor_rate > 0.0 && self.neighbor_rate <= 1.0) {
            return Err(Error::Parameter(format!(
                "neighbor_rate must lie in (0, 1], got {}",
                self.neighbor_rate
            )));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(
                "learning rate must be positive and weight decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

pub fn init_gat(input_dim: usize, cfg: &FinetuneConfig, seed: u64) -> Result<GatParams> {
    cfg.validate()?;
    if input_dim == 0 {
        return Err(Error::Parameter("GAT input width must be positive".into()));
    }
    let mut r = rng::stream(seed, rng::tag::INIT, 1);
    let width = cfg.heads * cfg.embed;
    let att_bound = 1.0 / (cfg.embed as f64).sqrt();
    let layers = (0..cfg.layers)
        .map(|l| {
            let d_in = if l == 0 { input_dim } else { width };
            let weight = Linear::init(d_in, width, &mut r).weight;
            let mut att = || DMatrix::from_fn(cfg.heads, cfg.embed, |_, _| r.random_range(-att_bound..att_bound));
            let att_self = att();
            let att_nbr = att();
            GatLayer {
                weight,
                att_self,
                att_nbr,
            }
        })
        .collect();
    Ok(GatParams {
        layers,
        output: Linear::init(width, 1, &mut r),
        input_dim,
        heads: cfg.heads,
        embed: cfg.embed,
        neighbor_rate: cfg.neighbor_rate,
    })
}

/// `max(1, round(rate·n))`.
pub fn neighbor_count(n: usize, rate: f64) -> usize {
    ((rate * n as f64).round() as usize).max(1)
}

/// Positions of the `k` largest scores; ties go to the lower position. All
/// positions are kept when there are at most `k`.
pub fn topk_mask(scores: &[f64], k: usize) -> Vec<bool> {
    let mut kept = vec![false; scores.len()];
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    for &i in order.iter().take(k) {
        kept[i] = true;
    }
    kept
}

/// Candidate neighbours per node: symmetric support plus the node itself,
/// in ascending order.
pub fn candidates(adjacency: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = adjacency.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j == i || adjacency[(i, j)] > 0.0 || adjacency[(j, i)] > 0.0)
                .collect()
        })
        .collect()
}

fn leaky(u: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        LEAKY_SLOPE * u
    }
}

/// Per-layer, per-head `N × N` attention, rows are attending nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layers: Vec<Vec<DMatrix<f64>>>,
}

impl AttentionMap {
    /// `layer,head,src,dst,weight` lines for the nonzero weights; `src` is
    /// the attended node, `dst` the one aggregating.
    pub fn records(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, heads) in self.layers.iter().enumerate() {
            for (h, alpha) in heads.iter().enumerate() {
                for dst in 0..alpha.nrows() {
                    for src in 0..alpha.ncols() {
                        let w = alpha[(dst, src)];
                        if w != 0.0 {
                            out.push(format!("{l},{h},{src},{dst},{w}"));
                        }
                    }
                }
            }
        }
        out
    }
}

struct LayerPass {
    input: DMatrix<f64>,
    z: DMatrix<f64>,
    /// `[graph][head]` attention.
    alpha: Vec<Vec<DMatrix<f64>>>,
    /// `[graph][head]` pre-activation scores `s_i + t_j` at kept positions.
    raw: Vec<Vec<DMatrix<f64>>>,
    aggregated: DMatrix<f64>,
    output: DMatrix<f64>,
}

struct GatPass {
    layers: Vec<LayerPass>,
    pooled: DMatrix<f64>,
    logits: Vec<f64>,
}

fn layer_forward(
    params: &GatParams,
    l: usize,
    input: DMatrix<f64>,
    offsets: &Offsets,
    cands: &[Vec<Vec<usize>>],
) -> LayerPass {
    let layer = &params.layers[l];
    let (heads, embed) = (params.heads, params.embed);
    let z = &input * &layer.weight;
    let mut aggregated = DMatrix::zeros(z.nrows(), params.width());
    let mut alpha = Vec::with_capacity(offsets.len());
    let mut raw = Vec::with_capacity(offsets.len());
    for g in 0..offsets.len() {
        let (start, n) = offsets.range(g);
        let k = neighbor_count(n, params.neighbor_rate);
        let mut g_alpha = Vec::with_capacity(heads);
        let mut g_raw = Vec::with_capacity(heads);
        for h in 0..heads {
            let zh = z.view((start, h * embed), (n, embed));
            let s = zh * layer.att_self.row(h).transpose();
            let t = zh * layer.att_nbr.row(h).transpose();
            let mut a = DMatrix::zeros(n, n);
            let mut u = DMatrix::zeros(n, n);
            for i in 0..n {
                let cand = &cands[g][i];
                let scores: Vec<f64> = cand.iter().map(|&j| leaky(s[i] + t[j])).collect();
                let kept = topk_mask(&scores, k);
                let max = cand
                    .iter()
                    .zip(&scores)
                    .zip(&kept)
                    .filter(|(_, &keep)| keep)
                    .map(|((_, &e), _)| e)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for ((&j, &e), &keep) in cand.iter().zip(&scores).zip(&kept) {
                    if keep {
                        let w = (e - max).exp();
                        a[(i, j)] = w;
                        u[(i, j)] = s[i] + t[j];
                        total += w;
                    }
                }
                for j in 0..n {
                    a[(i, j)] /= total;
                }
            }
            let out = &a * zh;
            aggregated.view_mut((start, h * embed), (n, embed)).copy_from(&out);
            g_alpha.push(a);
            g_raw.push(u);
        }
        alpha.push(g_alpha);
        raw.push(g_raw);
    }
    let last = l + 1 == params.layers.len();
    let output = if last { aggregated.clone() } else { nn::elu(&aggregated) };
    LayerPass {
        input,
        z,
        alpha,
        raw,
        aggregated,
        output,
    }
}

/// Returns the gradient with respect to the layer input.
fn layer_backward(
    params: &GatParams,
    l: usize,
    pass: &LayerPass,
    d_output: &DMatrix<f64>,
    offsets: &Offsets,
    grads: &mut GatParams,
) -> DMatrix<f64> {
    let layer = &params.layers[l];
    let (heads, embed) = (params.heads, params.embed);
    let last = l + 1 == params.layers.len();
    let d_agg = if last {
        d_output.clone()
    } else {
        nn::elu_backward(&pass.aggregated, d_output)
    };
    let mut dz = DMatrix::zeros(pass.z.nrows(), pass.z.ncols());
    let grad = &mut grads.layers[l];
    for g in 0..offsets.len() {
        let (start, n) = offsets.range(g);
        for h in 0..heads {
            let a = &pass.alpha[g][h];
            let u = &pass.raw[g][h];
            let zh = pass.z.view((start, h * embed), (n, embed));
            let d_out = d_agg.view((start, h * embed), (n, embed));
            let mut dzh = a.transpose() * d_out;
            let d_alpha = d_out * zh.transpose();
            let mut ds = vec![0.0; n];
            let mut dt = vec![0.0; n];
            for i in 0..n {
                let dot: f64 = (0..n).map(|j| a[(i, j)] * d_alpha[(i, j)]).sum();
                for j in 0..n {
                    if a[(i, j)] > 0.0 {
                        let de = a[(i, j)] * (d_alpha[(i, j)] - dot);
                        let du = if u[(i, j)] > 0.0 { de } else { LEAKY_SLOPE * de };
                        ds[i] += du;
                        dt[j] += du;
                    }
                }
            }
            for i in 0..n {
                for c in 0..embed {
                    grad.att_self[(h, c)] += ds[i] * zh[(i, c)];
                    grad.att_nbr[(h, c)] += dt[i] * zh[(i, c)];
                    dzh[(i, c)] += ds[i] * layer.att_self[(h, c)] + dt[i] * layer.att_nbr[(h, c)];
                }
            }
            let mut block = dz.view_mut((start, h * embed), (n, embed));
            block += &dzh;
        }
    }
    grad.weight += pass.input.transpose() * &dz;
    dz * layer.weight.transpose()
}

fn check_inputs(params: &GatParams, h: &DMatrix<f64>, adjacency: &[&DMatrix<f64>], offsets: &Offsets) -> Result<()> {
    if h.ncols() != params.input_dim {
        return Err(Error::Shape(format!(
            "GAT expects {}-wide node embeddings, got {}",
            params.input_dim,
            h.ncols()
        )));
    }
    for (g, a) in adjacency.iter().enumerate() {
        let (_, n) = offsets.range(g);
        if a.shape() != (n, n) {
            return Err(Error::Shape(format!("adjacency {g} is {:?} for {n} nodes", a.shape())));
        }
        if n == 0 {
            return Err(Error::Degenerate("graph without nodes".into()));
        }
    }
    Ok(())
}

fn forward(params: &GatParams, h: DMatrix<f64>, adjacency: &[&DMatrix<f64>], offsets: &Offsets) -> Result<GatPass> {
    check_inputs(params, &h, adjacency, offsets)?;
    let cands: Vec<_> = adjacency.iter().map(|a| candidates(a)).collect();
    let mut layers: Vec<LayerPass> = Vec::with_capacity(params.layers.len());
    let mut x = h;
    for l in 0..params.layers.len() {
        let pass = layer_forward(params, l, x, offsets, &cands);
        x = pass.output.clone();
        layers.push(pass);
    }
    let last = &layers.last().expect("at least one layer").output;
    let mut pooled = DMatrix::zeros(offsets.len(), params.width());
    for g in 0..offsets.len() {
        let (s, n) = offsets.range(g);
        pooled.row_mut(g).copy_from(&last.rows(s, n).row_mean());
    }
    let logits = params.output.forward(&pooled).iter().copied().collect();
    Ok(GatPass { layers, pooled, logits })
}

/// Mean binary cross-entropy from logits, computed stably.
fn bce(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Mean BCE over a batch with gradients for the classifier and for the
/// stacked node embeddings.
pub fn loss_and_grad(
    params: &GatParams,
    h: &DMatrix<f64>,
    adjacency: &[&DMatrix<f64>],
    offsets: &Offsets,
    labels: &[Label],
) -> Result<(f64, GatParams, DMatrix<f64>)> {
    if labels.len() != offsets.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} graphs",
            labels.len(),
            offsets.len()
        )));
    }
    let pass = forward(params, h.clone(), adjacency, offsets)?;
    let b = labels.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = DMatrix::zeros(labels.len(), 1);
    for (g, (&logit, &y)) in pass.logits.iter().zip(labels).enumerate() {
        loss += bce(logit, y.as_f64()) / b;
        d_logits[g] = (nn::sigmoid(logit) - y.as_f64()) / b;
    }
    let mut grads = params.zeros_like();
    let d_pooled = params.output.backward(&pass.pooled, &d_logits, &mut grads.output);
    let mut d_x = DMatrix::zeros(h.nrows(), params.width());
    for g in 0..offsets.len() {
        let (s, n) = offsets.range(g);
        let share = d_pooled.row(g) / n as f64;
        for r in s..s + n {
            d_x.row_mut(r).copy_from(&share);
        }
    }
    for l in (0..params.layers.len()).rev() {
        d_x = layer_backward(params, l, &pass.layers[l], &d_x, offsets, &mut grads);
    }
    Ok((loss, grads, d_x))
}

/// Seizure probability and attention for one graph from its node embeddings.
pub fn predict_embedded(params: &GatParams, h: &DMatrix<f64>, adjacency: &DMatrix<f64>) -> Result<(f64, AttentionMap)> {
    let offsets = Offsets::from_sizes([h.nrows()]);
    let pass = forward(params, h.clone(), &[adjacency], &offsets)?;
    let attention = AttentionMap {
        layers: pass
            .layers
            .into_iter()
            .map(|l| l.alpha.into_iter().next().unwrap())
            .collect(),
    };
    Ok((nn::sigmoid(pass.logits[0]), attention))
}

/// Eval-mode encoder followed by the classifier.
pub fn predict(g: &BrainGraph, enc: &EncoderParams, gat: &GatParams) -> Result<(f64, AttentionMap)> {
    let h = encoder::encode_nodes(enc, &g.adjacency, &g.features.values, None)?;
    predict_embedded(gat, &h, &g.adjacency)
}

/// Probabilities for many graphs in one stacked pass.
pub fn predict_batch(graphs: &[&BrainGraph], enc: &EncoderParams, gat: &GatParams) -> Result<Vec<f64>> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    let emb = encoder::embed_graphs(enc, graphs)?;
    let offsets = Offsets::from_sizes(graphs.iter().map(|g| g.n_nodes()));
    let mut h = DMatrix::zeros(*offsets.0.last().unwrap(), enc.hidden);
    for (g, m) in emb.node_embeddings.iter().enumerate() {
        let (s, n) = offsets.range(g);
        h.rows_mut(s, n).copy_from(m);
    }
    let adjacency: Vec<&DMatrix<f64>> = graphs.iter().map(|g| &g.adjacency).collect();
    let pass = forward(gat, h, &adjacency, &offsets)?;
    Ok(pass.logits.iter().map(|&l| nn::sigmoid(l)).collect())
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub gat: GatParams,
    /// Identical to the input encoder unless joint fine-tuning is enabled.
    pub encoder: EncoderParams,
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh classifier with mean BCE on top of `enc`.
pub fn finetune(
    graphs: &[BrainGraph],
    enc: &EncoderParams,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let ictal = graphs.iter().filter(|g| g.label == Label::Ictal).count();
    if ictal == 0 || ictal == graphs.len() {
        return Err(Error::Training(
            "fine-tuning needs both classes in the training set".into(),
        ));
    }
    let mut gat = init_gat(enc.hidden, cfg, seed)?;
    let mut enc = enc.clone();
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut enc_opt = Adam::new(cfg.lr, cfg.weight_decay);
    let all: Vec<&BrainGraph> = graphs.iter().collect();
    let (inputs, offsets) = encoder::stack_inputs(&enc, &all)?;
    // frozen encoder: node embeddings are computed once
    let frozen = if cfg.finetune_encoder {
        None
    } else {
        Some(encoder::forward_nodes(&enc, inputs.clone(), None).output)
    };
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        rand::seq::SliceRandom::shuffle(
            &mut order[..],
            &mut rng::stream(seed, rng::tag::SHUFFLE, (1 << 40) | epoch as u64),
        );
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let sub = Offsets::from_sizes(chunk.iter().map(|&i| graphs[i].n_nodes()));
            let gather = |m: &DMatrix<f64>| {
                let mut out = DMatrix::zeros(*sub.0.last().unwrap(), m.ncols());
                for (k, &i) in chunk.iter().enumerate() {
                    let (s, n) = offsets.range(i);
                    let (t, _) = sub.range(k);
                    out.rows_mut(t, n).copy_from(&m.rows(s, n));
                }
                out
            };
            let adjacency: Vec<&DMatrix<f64>> = chunk.iter().map(|&i| &graphs[i].adjacency).collect();
            let labels: Vec<Label> = chunk.iter().map(|&i| graphs[i].label).collect();
            let loss = match &frozen {
                Some(h) => {
                    let (loss, grads, _) = loss_and_grad(&gat, &gather(h), &adjacency, &sub, &labels)?;
                    opt.step(&mut gat, &grads);
                    loss
                }
                None => {
                    let mut drop = rng::stream(
                        seed,
                        rng::tag::DROPOUT,
                        (1 << 40) | ((epoch as u64) << 20) | batch as u64,
                    );
                    let node_pass = encoder::forward_nodes(&enc, gather(&inputs), Some(&mut drop));
                    let (loss, grads, d_h) = loss_and_grad(&gat, &node_pass.output, &adjacency, &sub, &labels)?;
                    let mut enc_grads = enc.zeros_like();
                    encoder::backward_nodes(&enc, &node_pass, &d_h, &mut enc_grads);
                    opt.step(&mut gat, &grads);
                    enc_opt.step(&mut enc, &enc_grads);
                    loss
                }
            };
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch} batch {batch}"
                )));
            }
            sum += loss * chunk.len() as f64;
            batches += chunk.len();
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok(FinetuneOutcome {
        gat,
        encoder: enc,
        epoch_losses,
    })
}
