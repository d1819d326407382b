//! Confusion metrics, ROC/AUC, stratified folds and cross-validation.

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::contrastive::{pretrain, PretrainConfig};
use crate::encoder::{init_encoder, EncoderParams};
use crate::error::{Error, Result};
use crate::gat::{finetune, predict_batch, FinetuneConfig, GatParams};
use crate::graph::{AugmentationPolicy, BrainGraph};
use crate::rng;
use crate::signalio::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Ratios; `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub const METRIC_NAMES: [&str; 6] = ["acc", "sen", "spe", "ppv", "npv", "auc"];

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Metrics {
            acc: ratio(c.tp + c.tn, c.total()),
            sen: ratio(c.tp, c.tp + c.fn_),
            spe: ratio(c.tn, c.tn + c.fp),
            ppv: ratio(c.tp, c.tp + c.fp),
            npv: ratio(c.tn, c.tn + c.fn_),
        }
    }
}

fn check_lengths(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Degenerate("no scores to evaluate".into()));
    }
    Ok(())
}

/// Counts with `score ≥ threshold` predicted ictal.
pub fn confusion_metrics(scores: &[f64], labels: &[Label], threshold: f64) -> Result<(ConfusionCounts, Metrics)> {
    check_lengths(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, Label::Ictal) => c.tp += 1,
            (true, Label::Interictal) => c.fp += 1,
            (false, Label::Interictal) => c.tn += 1,
            (false, Label::Ictal) => c.fn_ += 1,
        }
    }
    Ok((c, Metrics::from_counts(&c)))
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one step per unique
/// score, and the trapezoidal area under them.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<(Vec<(f64, f64)>, f64)> {
    check_lengths(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Ictal).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            match labels[order[i]] {
                Label::Ictal => tp += 1,
                Label::Interictal => fp += 1,
            }
            i += 1;
        }
        let point = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let prev = *roc.last().unwrap();
        auc += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        roc.push(point);
    }
    Ok((roc, auc))
}

/// Stratified folds: each class is shuffled and dealt round-robin, the
/// second class continuing where the first stopped so fold sizes stay
/// within one of each other.
pub fn kfold_split(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (c, class) in [Label::Interictal, Label::Ictal].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Stratification(format!(
                "class {} has {} members, fewer than {k} folds",
                class.as_f64(),
                members.len()
            )));
        }
        members.shuffle(&mut rng::stream(seed, rng::tag::FOLDS, c as u64));
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone)]
pub struct FoldReport {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub roc: Vec<(f64, f64)>,
    pub auc: Option<f64>,
    pub test_indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub encoder: EncoderParams,
    pub gat: GatParams,
}

impl FoldReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "acc" => self.metrics.acc,
            "sen" => self.metrics.sen,
            "spe" => self.metrics.spe,
            "ppv" => self.metrics.ppv,
            "npv" => self.metrics.npv,
            "auc" => self.auc,
            _ => None,
        }
    }
}

/// Mean and sample SD over the defined values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn summarize(values: &[Option<f64>]) -> Summary {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n = defined.len();
    if n == 0 {
        return Summary {
            mean: None,
            sd: None,
            n,
        };
    }
    let mean = defined.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Summary {
        mean: Some(mean),
        sd,
        n,
    }
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
}

impl CvReport {
    pub fn summary(&self, metric: &str) -> Summary {
        summarize(&self.folds.iter().map(|f| f.metric(metric)).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub pretrain: PretrainConfig,
    /// When false the classifier sits on a randomly initialised encoder.
    pub pretrain_enabled: bool,
    pub finetune: FinetuneConfig,
    pub policy: AugmentationPolicy,
    pub folds: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            pretrain: PretrainConfig::default(),
            pretrain_enabled: true,
            finetune: FinetuneConfig::default(),
            policy: AugmentationPolicy::default(),
            folds: 10,
            threshold: 0.5,
            seed: 0,
        }
    }
}

/// Encoder and classifier trained on `train`.
pub fn train_pipeline(train: &[BrainGraph], cfg: &CvConfig, seed: u64) -> Result<(EncoderParams, GatParams)> {
    let first = train
        .first()
        .ok_or_else(|| Error::Training("empty training set".into()))?;
    let encoder = if cfg.pretrain_enabled {
        pretrain(train, &cfg.pretrain, &cfg.policy, seed)?.params
    } else {
        let mut enc = init_encoder(first.features.n_features(), cfg.pretrain.hidden, seed)?;
        enc.dropout = cfg.pretrain.dropout;
        enc
    };
    let tuned = finetune(train, &encoder, &cfg.finetune, seed)?;
    Ok((tuned.encoder, tuned.gat))
}

pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    rng::stream(seed, rng::tag::FOLD_RUN, fold as u64).next_u64()
}

/// Scores `test` with trained parameters. AUC is `None` when the test
/// set holds a single class.
pub fn evaluate_fold(
    graphs: &[BrainGraph],
    test: Vec<usize>,
    fold: usize,
    encoder: EncoderParams,
    gat: GatParams,
    threshold: f64,
) -> Result<FoldReport> {
    let test_graphs: Vec<&BrainGraph> = test.iter().map(|&i| &graphs[i]).collect();
    let scores = predict_batch(&test_graphs, &encoder, &gat)?;
    let test_labels: Vec<Label> = test_graphs.iter().map(|g| g.label).collect();
    let (counts, metrics) = confusion_metrics(&scores, &test_labels, threshold)?;
    let (roc, auc) = match roc_auc(&scores, &test_labels) {
        Ok((roc, auc)) => (roc, Some(auc)),
        Err(Error::UndefinedAuc) => (Vec::new(), None),
        Err(e) => return Err(e),
    };
    log::info!(
        "fold {fold}: acc {:.4} auc {}",
        metrics.acc.unwrap_or(f64::NAN),
        auc.map_or("NA".into(), |a| format!("{a:.4}"))
    );
    Ok(FoldReport {
        fold,
        counts,
        metrics,
        roc,
        auc,
        test_indices: test,
        scores,
        encoder,
        gat,
    })
}

/// k-fold cross-validation: each fold pretrains and fine-tunes on the
/// remaining folds only.
pub fn cross_validate(graphs: &[BrainGraph], cfg: &CvConfig) -> Result<CvReport> {
    let labels: Vec<Label> = graphs.iter().map(|g| g.label).collect();
    let folds = kfold_split(&labels, cfg.folds, cfg.seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (k, test) in folds.iter().enumerate() {
        let mut in_test = vec![false; graphs.len()];
        for &i in test {
            in_test[i] = true;
        }
        let train: Vec<BrainGraph> = graphs
            .iter()
            .zip(&in_test)
            .filter(|(_, &t)| !t)
            .map(|(g, _)| g.clone())
            .collect();
        let (encoder, gat) = train_pipeline(&train, cfg, fold_seed(cfg.seed, k))?;
        reports.push(evaluate_fold(graphs, test.clone(), k, encoder, gat, cfg.threshold)?);
    }
    Ok(CvReport { folds: reports })
}
