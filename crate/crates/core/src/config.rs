//! Key=value pipeline configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Later assignments win, so
//! command-line overrides are applied after the file. [`PipelineConfig::dump`]
//! writes every key, which makes a dumped file a complete record of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::connectivity::{default_bands, FrequencyBand};
use crate::contrastive::{PretrainConfig, SigmaMode};
use crate::error::{Error, Result};
use crate::evaluation::CvConfig;
use crate::gat::FinetuneConfig;
use crate::graph::AugmentationPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub pretrain: PretrainConfig,
    pub pretrain_enabled: bool,
    pub node_mask_ratio: f64,
    pub edge_perturb_ratio: f64,
    pub finetune: FinetuneConfig,
    pub window_s: f64,
    pub overlap: f64,
    pub pre_s: f64,
    pub post_s: f64,
    pub mvar_order: usize,
    pub dtf_normalized: bool,
    pub bands: Vec<FrequencyBand>,
    pub folds: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pretrain: PretrainConfig::default(),
            pretrain_enabled: true,
            node_mask_ratio: 0.2,
            edge_perturb_ratio: 0.2,
            finetune: FinetuneConfig::default(),
            window_s: 2.0,
            overlap: 0.5,
            pre_s: 10.0,
            post_s: 10.0,
            mvar_order: 10,
            dtf_normalized: true,
            bands: default_bands(),
            folds: 10,
            threshold: 0.5,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl PipelineConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "hidden" => self.pretrain.hidden = parse(key, v)?,
            "dropout" => self.pretrain.dropout = parse(key, v)?,
            "pretrain.enabled" => self.pretrain_enabled = parse_bool(key, v)?,
            "pretrain.lr" => self.pretrain.lr = parse(key, v)?,
            "pretrain.weight_decay" => self.pretrain.weight_decay = parse(key, v)?,
            "pretrain.epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, v)?,
            "tau" => self.pretrain.tau = parse(key, v)?,
            "gamma" => self.pretrain.gamma = parse(key, v)?,
            "alpha" => self.pretrain.alpha = parse(key, v)?,
            "sigma" => {
                self.pretrain.sigma_mode = match v {
                    "median" => SigmaMode::Median,
                    _ => SigmaMode::Fixed(parse(key, v)?),
                }
            }
            "graph_loss" => self.pretrain.use_graph_loss = parse_bool(key, v)?,
            "node_mask_ratio" => self.node_mask_ratio = parse(key, v)?,
            "edge_perturb_ratio" => self.edge_perturb_ratio = parse(key, v)?,
            "gat.layers" => self.finetune.layers = parse(key, v)?,
            "gat.heads" => self.finetune.heads = parse(key, v)?,
            "gat.embed" => self.finetune.embed = parse(key, v)?,
            "neighbor_rate" => self.finetune.neighbor_rate = parse(key, v)?,
            "finetune.lr" => self.finetune.lr = parse(key, v)?,
            "finetune.weight_decay" => self.finetune.weight_decay = parse(key, v)?,
            "finetune.batch_size" => self.finetune.batch_size = parse(key, v)?,
            "finetune.epochs" => self.finetune.epochs = parse(key, v)?,
            "finetune_encoder" => self.finetune.finetune_encoder = parse_bool(key, v)?,
            "window_s" => self.window_s = parse(key, v)?,
            "overlap" => self.overlap = parse(key, v)?,
            "pre_s" => self.pre_s = parse(key, v)?,
            "post_s" => self.post_s = parse(key, v)?,
            "mvar_order" => self.mvar_order = parse(key, v)?,
            "dtf_normalized" => self.dtf_normalized = parse_bool(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            k if k.starts_with("band.") => {
                let name = &k[5..];
                let (lo, hi) = v
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("{k}: expected lo,hi")))?;
                let band = FrequencyBand::new(name, parse(k, lo.trim())?, parse(k, hi.trim())?)
                    .map_err(|e| Error::Config(e.to_string()))?;
                match self.bands.iter_mut().find(|b| b.name == name) {
                    Some(b) => *b = band,
                    None => self.bands.push(band),
                }
            }
            k => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` assignments given as single strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn parse_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", origin.display(), n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.pretrain.validate().map_err(wrap)?;
        self.finetune.validate().map_err(wrap)?;
        self.policy().validate().map_err(wrap)?;
        if !(self.window_s > 0.0) || !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config("window_s must be positive and overlap in [0, 1)".into()));
        }
        if !(self.pre_s > 0.0 && self.post_s > 0.0) {
            return Err(Error::Config("pre_s and post_s must be positive".into()));
        }
        if self.mvar_order == 0 {
            return Err(Error::Config("mvar_order must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            node_mask_ratio: self.node_mask_ratio,
            edge_perturb_ratio: self.edge_perturb_ratio,
            seed: self.seed,
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            pretrain: self.pretrain.clone(),
            pretrain_enabled: self.pretrain_enabled,
            finetune: self.finetune.clone(),
            policy: self.policy(),
            folds: self.folds,
            threshold: self.threshold,
            seed: self.seed,
        }
    }

    /// Every key with its current value, one per line.
    pub fn dump(&self) -> String {
        let p = &self.pretrain;
        let f = &self.finetune;
        let sigma = match p.sigma_mode {
            SigmaMode::Median => "median".to_string(),
            SigmaMode::Fixed(s) => s.to_string(),
        };
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("hidden", p.hidden.to_string());
        put("dropout", p.dropout.to_string());
        put("pretrain.enabled", self.pretrain_enabled.to_string());
        put("pretrain.lr", p.lr.to_string());
        put("pretrain.weight_decay", p.weight_decay.to_string());
        put("pretrain.epochs", p.epochs.to_string());
        put("pretrain.batch_size", p.batch_size.to_string());
        put("tau", p.tau.to_string());
        put("gamma", p.gamma.to_string());
        put("alpha", p.alpha.to_string());
        put("sigma", sigma);
        put("graph_loss", p.use_graph_loss.to_string());
        put("node_mask_ratio", self.node_mask_ratio.to_string());
        put("edge_perturb_ratio", self.edge_perturb_ratio.to_string());
        put("gat.layers", f.layers.to_string());
        put("gat.heads", f.heads.to_string());
        put("gat.embed", f.embed.to_string());
        put("neighbor_rate", f.neighbor_rate.to_string());
        put("finetune.lr", f.lr.to_string());
        put("finetune.weight_decay", f.weight_decay.to_string());
        put("finetune.batch_size", f.batch_size.to_string());
        put("finetune.epochs", f.epochs.to_string());
        put("finetune_encoder", f.finetune_encoder.to_string());
        put("window_s", self.window_s.to_string());
        put("overlap", self.overlap.to_string());
        put("pre_s", self.pre_s.to_string());
        put("post_s", self.post_s.to_string());
        put("mvar_order", self.mvar_order.to_string());
        put("dtf_normalized", self.dtf_normalized.to_string());
        for b in &self.bands {
            put(&format!("band.{}", b.name), format!("{},{}", b.lo, b.hi));
        }
        put("folds", self.folds.to_string());
        put("threshold", self.threshold.to_string());
        put("seed", self.seed.to_string());
        out
    }
}
