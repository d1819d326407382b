//! Node–graph dual contrastive pretraining.
//!
//! Two objectives are combined, `L = L_graph + α·L_info`:
//!
//! * `L_graph` is a supervised InfoNCE over graph pairs whose similarity
//!   blends a spectral RBF kernel on decoded adjacencies with the cosine of
//!   graph embeddings. The spectral part is a stop-gradient weight.
//! * `L_info` contrasts every node embedding against all graph embeddings in
//!   the batch, its own graph being the positive.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::encoder::{self, EncoderParams, NodePass, Offsets};
use crate::error::{Error, Result};
use crate::graph::{augment, AugmentationPolicy, BrainGraph};
use crate::nn::Adam;
use crate::rng;
use crate::signalio::Label;

/// Sorted eigenvalues of a normalised Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSignature {
    pub eigenvalues: Vec<f64>,
}

const DEGREE_FLOOR: f64 = 1e-8;

/// Spectrum of `I − D^{−1/2} M D^{−1/2}` with `M` the symmetrised,
/// zero-diagonal version of `a_hat`.
pub fn laplacian_spectrum(a_hat: &DMatrix<f64>) -> Result<SpectralSignature> {
    let n = a_hat.nrows();
    if a_hat.ncols() != n {
        return Err(Error::Shape(format!("adjacency is {}×{}", n, a_hat.ncols())));
    }
    if a_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite adjacency entry".into()));
    }
    if a_hat.iter().any(|&v| v < 0.0) {
        return Err(Error::Parameter("adjacency must be nonnegative".into()));
    }
    let mut m = (a_hat + a_hat.transpose()) * 0.5;
    m.fill_diagonal(0.0);
    let inv_sqrt: Vec<f64> = m.row_iter().map(|r| 1.0 / r.sum().max(DEGREE_FLOOR).sqrt()).collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let off = m[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    });
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(lap).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(SpectralSignature { eigenvalues })
}

fn spectral_distance_sq(a: &SpectralSignature, b: &SpectralSignature) -> Result<f64> {
    if a.eigenvalues.len() != b.eigenvalues.len() {
        return Err(Error::SpectralDimension(a.eigenvalues.len(), b.eigenvalues.len()));
    }
    Ok(a.eigenvalues
        .iter()
        .zip(&b.eigenvalues)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// RBF kernel on eigenvalue vectors.
pub fn global_similarity(a: &SpectralSignature, b: &SpectralSignature, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok((-spectral_distance_sq(a, b)? / (2.0 * sigma * sigma)).exp())
}

/// Cosine similarity; 0 when either vector is zero.
pub fn local_similarity(h_i: &[f64], h_j: &[f64]) -> f64 {
    let dot: f64 = h_i.iter().zip(h_j).map(|(a, b)| a * b).sum();
    let ni = h_i.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nj = h_j.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ni == 0.0 || nj == 0.0 {
        0.0
    } else {
        dot / (ni * nj)
    }
}

pub fn blended_similarity(s_global: f64, s_local: f64, gamma: f64) -> f64 {
    gamma * s_global + (1.0 - gamma) * s_local
}

pub fn total_loss(l_graph: f64, l_info: f64, alpha: f64) -> f64 {
    l_graph + alpha * l_info
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Supervised InfoNCE over a `B × B` similarity matrix, with its gradient
/// `∂L/∂S` (diagonal is always zero).
pub fn graph_contrastive_with_grad(sims: &DMatrix<f64>, labels: &[Label], tau: f64) -> Result<(f64, DMatrix<f64>)> {
    let b = labels.len();
    if sims.nrows() != b || sims.ncols() != b {
        return Err(Error::Shape(format!(
            "{}×{} similarities for {b} labels",
            sims.nrows(),
            sims.ncols()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let anchors: Vec<(usize, Vec<usize>)> = (0..b)
        .map(|i| {
            (
                i,
                (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect::<Vec<_>>(),
            )
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if anchors.is_empty() {
        return Err(Error::DegenerateBatch("no anchor has a same-class partner".into()));
    }
    let scale = 1.0 / anchors.len() as f64;
    let mut grad = DMatrix::zeros(b, b);
    let mut loss = 0.0;
    for (i, positives) in &anchors {
        let i = *i;
        let others = (0..b).filter(move |&j| j != i).map(|j| sims[(i, j)] / tau);
        let lse = log_sum_exp(others);
        let share = 1.0 / positives.len() as f64;
        loss += scale * positives.iter().map(|&p| lse - sims[(i, p)] / tau).sum::<f64>() * share;
        for j in (0..b).filter(|&j| j != i) {
            let soft = (sims[(i, j)] / tau - lse).exp();
            grad[(i, j)] += scale * soft / tau;
        }
        for &p in positives {
            grad[(i, p)] -= scale * share / tau;
        }
    }
    Ok((loss, grad))
}

pub fn graph_contrastive_loss(sims: &DMatrix<f64>, labels: &[Label], tau: f64) -> Result<f64> {
    graph_contrastive_with_grad(sims, labels, tau).map(|(l, _)| l)
}

/// Rows scaled to unit length; zero rows stay zero. Returns the norms too.
fn normalize_rows(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

fn normalize_rows_backward(unit: &DMatrix<f64>, norms: &[f64], d_unit: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(unit.nrows(), unit.ncols());
    for (r, &n) in norms.iter().enumerate() {
        if n > 0.0 {
            let u = unit.row(r);
            let d = d_unit.row(r);
            let proj = u.dot(&d);
            out.row_mut(r).copy_from(&((d - u * proj) / n));
        }
    }
    out
}

/// Node–graph InfoNCE on stacked node embeddings. Returns the loss and the
/// gradients with respect to the node and graph embeddings.
pub fn infograph_with_grad(
    nodes: &DMatrix<f64>,
    offsets: &Offsets,
    graphs: &DMatrix<f64>,
    tau: f64,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let b = graphs.nrows();
    if b < 2 {
        return Err(Error::DegenerateBatch(format!(
            "InfoGraph needs at least 2 graphs, got {b}"
        )));
    }
    if offsets.len() != b || *offsets.0.last().unwrap() != nodes.nrows() {
        return Err(Error::Shape("node offsets do not match the batch".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let total = nodes.nrows();
    if total == 0 {
        return Err(Error::DegenerateBatch("batch has no nodes".into()));
    }
    let (hn, hnorm) = normalize_rows(nodes);
    let (gn, gnorm) = normalize_rows(graphs);
    let cos = &hn * gn.transpose();
    let mut d_cos = DMatrix::zeros(total, b);
    let mut loss = 0.0;
    let scale = 1.0 / total as f64;
    for g in 0..b {
        let (start, n) = offsets.range(g);
        for v in start..start + n {
            let logits = (0..b).map(|k| cos[(v, k)] / tau);
            let lse = log_sum_exp(logits);
            loss += scale * (lse - cos[(v, g)] / tau);
            for k in 0..b {
                d_cos[(v, k)] = scale * (cos[(v, k)] / tau - lse).exp() / tau;
            }
            d_cos[(v, g)] -= scale / tau;
        }
    }
    let d_hn = &d_cos * &gn;
    let d_gn = d_cos.transpose() * &hn;
    Ok((
        loss,
        normalize_rows_backward(&hn, &hnorm, &d_hn),
        normalize_rows_backward(&gn, &gnorm, &d_gn),
    ))
}

pub fn infograph_loss(node_embs: &[DMatrix<f64>], graph_embs: &DMatrix<f64>, tau: f64) -> Result<f64> {
    let offsets = Offsets::from_sizes(node_embs.iter().map(|m| m.nrows()));
    let cols = graph_embs.ncols();
    let mut stacked = DMatrix::zeros(*offsets.0.last().unwrap(), cols);
    for (g, m) in node_embs.iter().enumerate() {
        if m.ncols() != cols {
            return Err(Error::Shape("node and graph embedding widths differ".into()));
        }
        let (s, n) = offsets.range(g);
        stacked.rows_mut(s, n).copy_from(m);
    }
    infograph_with_grad(&stacked, &offsets, graph_embs, tau).map(|(l, _, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// Median pairwise spectral distance of the batch, floored at 1e-6.
    Median,
    Fixed(f64),
}

const SIGMA_FLOOR: f64 = 1e-6;

/// RBF similarity matrix over the spectra of a batch.
pub fn global_similarity_matrix(spectra: &[SpectralSignature], mode: SigmaMode) -> Result<DMatrix<f64>> {
    let b = spectra.len();
    let mut dist_sq = DMatrix::zeros(b, b);
    let mut dists = Vec::with_capacity(b * b.saturating_sub(1) / 2);
    for i in 0..b {
        for j in i + 1..b {
            let d = spectral_distance_sq(&spectra[i], &spectra[j])?;
            dist_sq[(i, j)] = d;
            dist_sq[(j, i)] = d;
            dists.push(d.sqrt());
        }
    }
    let sigma = match mode {
        SigmaMode::Fixed(s) if s > 0.0 => s,
        SigmaMode::Fixed(s) => return Err(Error::Parameter(format!("sigma must be positive, got {s}"))),
        SigmaMode::Median => median(&mut dists).unwrap_or(SIGMA_FLOOR).max(SIGMA_FLOOR),
    };
    Ok(dist_sq.map(|d| (-d / (2.0 * sigma * sigma)).exp()))
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub sigma_mode: SigmaMode,
    pub hidden: usize,
    pub dropout: f64,
    /// Disabling drops `L_graph` from the objective.
    pub use_graph_loss: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 0.0,
            tau: 0.3,
            gamma: 0.5,
            alpha: 1.0,
            sigma_mode: SigmaMode::Median,
            hidden: encoder::DEFAULT_HIDDEN,
            dropout: encoder::DEFAULT_DROPOUT,
            use_graph_loss: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Parameter(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Parameter(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Parameter("batch size and hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Loss components of one optimiser step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub l_graph: f64,
    pub l_info: f64,
    pub l_total: f64,
}

impl LossRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.batch, self.l_graph, self.l_info, self.l_total
        )
    }
}

/// Loss and encoder gradient for one batch given its node pass and a fixed
/// spectral similarity matrix.
pub fn batch_objective(
    params: &EncoderParams,
    pass: &NodePass,
    offsets: &Offsets,
    labels: &[Label],
    s_global: &DMatrix<f64>,
    cfg: &PretrainConfig,
) -> Result<(f64, f64, EncoderParams)> {
    let graph_pass = encoder::forward_graphs(params, &pass.output, offsets);
    let b = labels.len();
    let mut d_graph = DMatrix::zeros(b, params.hidden);
    let mut d_nodes = DMatrix::zeros(pass.output.nrows(), params.hidden);

    let mut l_graph = 0.0;
    if cfg.use_graph_loss {
        let (gn, gnorm) = normalize_rows(&graph_pass.output);
        let s_local = &gn * gn.transpose();
        let sims = s_global * cfg.gamma + &s_local * (1.0 - cfg.gamma);
        let (loss, d_sims) = graph_contrastive_with_grad(&sims, labels, cfg.tau)?;
        l_graph = loss;
        let d_local = d_sims * (1.0 - cfg.gamma);
        let d_gn = (&d_local + d_local.transpose()) * &gn;
        d_graph += normalize_rows_backward(&gn, &gnorm, &d_gn);
    }

    let mut l_info = 0.0;
    if cfg.alpha > 0.0 {
        let (loss, dn, dg) = infograph_with_grad(&pass.output, offsets, &graph_pass.output, cfg.tau)?;
        l_info = loss;
        d_nodes += dn * cfg.alpha;
        d_graph += dg * cfg.alpha;
    }

    let mut grads = params.zeros_like();
    d_nodes += encoder::backward_graphs(params, &graph_pass, &d_graph, offsets, &mut grads);
    encoder::backward_nodes(params, pass, &d_nodes, &mut grads);
    Ok((l_graph, l_info, grads))
}

/// Spectral similarity matrix from the decoded adjacency of every graph.
pub fn decoded_similarity(
    params: &EncoderParams,
    node_embeddings: &DMatrix<f64>,
    offsets: &Offsets,
    mode: SigmaMode,
) -> Result<DMatrix<f64>> {
    let spectra = (0..offsets.len())
        .map(|g| {
            let (s, n) = offsets.range(g);
            laplacian_spectrum(&encoder::decode_adjacency(
                params,
                &node_embeddings.rows(s, n).into_owned(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    global_similarity_matrix(&spectra, mode)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    pub trace: Vec<LossRecord>,
    /// Mean total loss per epoch over the batches that were not skipped.
    pub epoch_losses: Vec<f64>,
}

fn batch_problem(labels: &[Label]) -> Option<String> {
    if labels.len() < 2 {
        return Some(format!("{} graph(s) in batch", labels.len()));
    }
    let ictal = labels.iter().filter(|&&l| l == Label::Ictal).count();
    if ictal == 0 || ictal == labels.len() {
        return Some("batch holds a single class".into());
    }
    None
}

/// Contrastive pretraining of a fresh encoder on `graphs`.
pub fn pretrain(
    graphs: &[BrainGraph],
    cfg: &PretrainConfig,
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    policy.validate()?;
    let first = graphs
        .first()
        .ok_or_else(|| Error::Training("no graphs to pretrain on".into()))?;
    let feature_count = first.features.n_features();
    let mut params = encoder::init_encoder(feature_count, cfg.hidden, seed)?;
    params.dropout = cfg.dropout;
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut trace = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng::stream(seed, rng::tag::SHUFFLE, epoch as u64));
        let mut sum = 0.0;
        let mut steps = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<Label> = chunk.iter().map(|&i| graphs[i].label).collect();
            if let Some(problem) = batch_problem(&labels) {
                log::warn!("epoch {epoch} batch {batch} skipped: {problem}");
                continue;
            }
            let augmented = chunk
                .iter()
                .map(|&i| {
                    let index = ((epoch as u64) << 32) | i as u64;
                    let mut r = rng::stream(policy.seed ^ seed, rng::tag::AUGMENT, index);
                    augment(&graphs[i], policy, &mut r)
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&BrainGraph> = augmented.iter().collect();
            let (input, offsets) = encoder::stack_inputs(&params, &refs)?;
            let mut drop_rng = rng::stream(seed, rng::tag::DROPOUT, ((epoch as u64) << 32) | batch as u64);
            let pass = encoder::forward_nodes(&params, input, Some(&mut drop_rng));
            let s_global = if cfg.use_graph_loss && cfg.gamma > 0.0 {
                decoded_similarity(&params, &pass.output, &offsets, cfg.sigma_mode)?
            } else {
                DMatrix::zeros(labels.len(), labels.len())
            };
            let (l_graph, l_info, grads) = match batch_objective(&params, &pass, &offsets, &labels, &s_global, cfg) {
                Ok(v) => v,
                Err(Error::DegenerateBatch(why)) => {
                    log::warn!("epoch {epoch} batch {batch} skipped: {why}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let l_total = total_loss(l_graph, l_info, cfg.alpha);
            if !l_total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch} batch {batch}"
                )));
            }
            adam.step(&mut params, &grads);
            trace.push(LossRecord {
                epoch,
                batch,
                l_graph,
                l_info,
                l_total,
            });
            sum += l_total;
            steps += 1;
        }
        if steps == 0 {
            return Err(Error::Training(format!("every batch of epoch {epoch} was degenerate")));
        }
        epoch_losses.push(sum / steps as f64);
    }
    Ok(PretrainOutcome {
        params,
        trace,
        epoch_losses,
    })
}
