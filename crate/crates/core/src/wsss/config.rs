//! Training configuration as `key=value` text.

use crate::decoder::{DecoderConfig, EdgeTap, Fusion, Mode};
use crate::error::{Error, Result};
use crate::io::kv;
use crate::losses::{LossOptions, LossWeights};
use crate::model::ModelConfig;
use crate::synthdata::encoder::EncoderConfig;

use super::optim::AdamWConfig;

/// Which decoder components and loop stages are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    /// Dynamic multi-scale fusion; off gives concat + 1×1 fusion.
    pub dmf: bool,
    /// Variance head, heteroscedastic loss, uncertainty weighting and refiner.
    pub ugr: bool,
    /// Gated residual refiner (only meaningful with `ugr`).
    pub refiner: bool,
    /// Boundary head with the band and distance-weighted losses.
    pub bnd: bool,
    /// Uncertainty-modulated fusion.
    pub udmf: bool,
    /// EMA teacher and periodic relabeling.
    pub ema: bool,
}

impl Components {
    pub const ALL: Components = Components {
        dmf: true,
        ugr: true,
        refiner: true,
        bnd: true,
        udmf: true,
        ema: true,
    };

    pub const NONE: Components = Components {
        dmf: false,
        ugr: false,
        refiner: false,
        bnd: false,
        udmf: false,
        ema: false,
    };

    pub fn validate(&self) -> Result<()> {
        if self.udmf && !self.ugr {
            return Err(Error::Config(
                "uncertainty-modulated fusion needs the uncertainty branch (disable udmf too)"
                    .into(),
            ));
        }
        if self.udmf && !self.dmf {
            return Err(Error::Config(
                "uncertainty-modulated fusion needs dynamic fusion (disable udmf too)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_encoder_scale: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub grad_clip: f64,
    pub q_start: f64,
    pub q_end: f64,
    pub q_anneal_epochs: usize,
    pub ema_tau: f64,
    /// First epoch at which the teacher relabels; relabeling repeats every
    /// `relabel_period` epochs from there.
    pub relabel_start_epoch: usize,
    pub relabel_period: usize,
    pub keep_fraction: f64,
    pub detach_epochs: usize,
    /// First epoch at which uncertainty weights replace uniform weights.
    pub weighting_start_epoch: usize,
    pub hflip: bool,
    pub seed: u64,
    pub width: usize,
    pub edge_hidden: usize,
    pub edge_tap: EdgeTap,
    /// Score modulation strength of the fusion.
    pub fusion_alpha: f64,
    pub loss: LossWeights,
    pub weight_boundary: bool,
    pub components: Components,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 8,
            lr: 6e-5,
            lr_encoder_scale: 0.1,
            weight_decay: 1e-4,
            warmup_epochs: 1,
            grad_clip: 5.0,
            q_start: 30.0,
            q_end: 15.0,
            q_anneal_epochs: 10,
            ema_tau: 0.999,
            relabel_start_epoch: 6,
            relabel_period: 3,
            keep_fraction: 0.8,
            detach_epochs: 3,
            weighting_start_epoch: 3,
            hflip: true,
            seed: 0,
            width: 32,
            edge_hidden: 8,
            edge_tap: EdgeTap::Finest,
            fusion_alpha: 1.0,
            loss: LossWeights::default(),
            weight_boundary: false,
            components: Components::ALL,
        }
    }
}

fn tap_name(t: EdgeTap) -> &'static str {
    match t {
        EdgeTap::Finest => "finest",
        EdgeTap::Fused => "fused",
    }
}

impl TrainConfig {
    /// Whether the teacher relabels at the start of `epoch`.
    pub fn relabels_at(&self, epoch: usize) -> bool {
        self.components.ema
            && epoch > 0
            && epoch >= self.relabel_start_epoch
            && (epoch - self.relabel_start_epoch).is_multiple_of(self.relabel_period)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_encoder_scale >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be > 0; lr_encoder_scale and weight_decay ≥ 0".into());
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be ≥ 0".into());
        }
        if !(0.0 <= self.q_end && self.q_end <= self.q_start && self.q_start < 100.0) {
            return bad(format!(
                "need 0 ≤ q_end ≤ q_start < 100, got q_start={} q_end={}",
                self.q_start, self.q_end
            ));
        }
        if !(self.ema_tau > 0.0 && self.ema_tau < 1.0) {
            return bad(format!("ema_tau must lie in (0, 1), got {}", self.ema_tau));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction < 1.0) {
            return bad(format!(
                "keep_fraction must lie in (0, 1), got {}",
                self.keep_fraction
            ));
        }
        if self.relabel_period == 0 {
            return bad("relabel_period must be positive".into());
        }
        if self.width == 0 || self.edge_hidden == 0 {
            return bad("width and edge_hidden must be positive".into());
        }
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.components.validate()?;
        self.model_config(2)?;
        Ok(())
    }

    pub fn model_config(&self, classes: usize) -> Result<ModelConfig> {
        let c = self.components;
        let encoder = EncoderConfig::default();
        let decoder = DecoderConfig {
            in_channels: encoder.channels,
            width: self.width,
            classes,
            fusion: if c.dmf {
                Fusion::Dynamic
            } else {
                Fusion::Concat
            },
            use_norm: true,
            variance: c.ugr,
            refiner: c.ugr && c.refiner,
            boundary: c.bnd,
            edge_tap: self.edge_tap,
            edge_hidden: self.edge_hidden,
            mode: if c.udmf {
                Mode::UncertaintyModulated
            } else {
                Mode::Plain
            },
            alpha: self.fusion_alpha,
            reliability: None,
        };
        decoder.validate()?;
        Ok(ModelConfig { encoder, decoder })
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            encoder_scale: self.lr_encoder_scale,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            weight_boundary: self.weight_boundary,
        }
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let c = self.components;
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_encoder_scale", self.lr_encoder_scale.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("q_start", self.q_start.to_string()),
            ("q_end", self.q_end.to_string()),
            ("q_anneal_epochs", self.q_anneal_epochs.to_string()),
            ("ema_tau", self.ema_tau.to_string()),
            ("relabel_start_epoch", self.relabel_start_epoch.to_string()),
            ("relabel_period", self.relabel_period.to_string()),
            ("keep_fraction", self.keep_fraction.to_string()),
            ("detach_epochs", self.detach_epochs.to_string()),
            (
                "weighting_start_epoch",
                self.weighting_start_epoch.to_string(),
            ),
            ("hflip", self.hflip.to_string()),
            ("seed", self.seed.to_string()),
            ("width", self.width.to_string()),
            ("edge_hidden", self.edge_hidden.to_string()),
            ("edge_tap", tap_name(self.edge_tap).to_string()),
            ("fusion_alpha", self.fusion_alpha.to_string()),
            ("lambda_dice", self.loss.dice.to_string()),
            ("lambda_het", self.loss.het.to_string()),
            ("lambda_bnd", self.loss.bnd.to_string()),
            ("lambda_sdf", self.loss.sdf.to_string()),
            ("mix_alpha", self.loss.alpha.to_string()),
            ("beta", self.loss.beta.to_string()),
            ("weight_boundary", self.weight_boundary.to_string()),
            ("dmf", c.dmf.to_string()),
            ("ugr", c.ugr.to_string()),
            ("refiner", c.refiner.to_string()),
            ("bnd", c.bnd.to_string()),
            ("udmf", c.udmf.to_string()),
            ("ema", c.ema.to_string()),
        ]
    }

    pub fn render(&self) -> String {
        kv::render(self.to_pairs())
    }

    /// Set one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        use kv::{boolean as b, value as p};
        match key {
            "epochs" => self.epochs = p(key, v)?,
            "batch_size" => self.batch_size = p(key, v)?,
            "lr" => self.lr = p(key, v)?,
            "lr_encoder_scale" => self.lr_encoder_scale = p(key, v)?,
            "weight_decay" => self.weight_decay = p(key, v)?,
            "warmup_epochs" => self.warmup_epochs = p(key, v)?,
            "grad_clip" => self.grad_clip = p(key, v)?,
            "q_start" => self.q_start = p(key, v)?,
            "q_end" => self.q_end = p(key, v)?,
            "q_anneal_epochs" => self.q_anneal_epochs = p(key, v)?,
            "ema_tau" => self.ema_tau = p(key, v)?,
            "relabel_start_epoch" => self.relabel_start_epoch = p(key, v)?,
            "relabel_period" => self.relabel_period = p(key, v)?,
            "keep_fraction" => self.keep_fraction = p(key, v)?,
            "detach_epochs" => self.detach_epochs = p(key, v)?,
            "weighting_start_epoch" => self.weighting_start_epoch = p(key, v)?,
            "hflip" => self.hflip = b(key, v)?,
            "seed" => self.seed = p(key, v)?,
            "width" => self.width = p(key, v)?,
            "edge_hidden" => self.edge_hidden = p(key, v)?,
            "edge_tap" => {
                self.edge_tap = match v {
                    "finest" => EdgeTap::Finest,
                    "fused" => EdgeTap::Fused,
                    _ => {
                        return Err(Error::Config(format!(
                            "edge_tap: expected finest or fused, got {v:?}"
                        )))
                    }
                }
            }
            "fusion_alpha" => self.fusion_alpha = p(key, v)?,
            "lambda_dice" => self.loss.dice = p(key, v)?,
            "lambda_het" => self.loss.het = p(key, v)?,
            "lambda_bnd" => self.loss.bnd = p(key, v)?,
            "lambda_sdf" => self.loss.sdf = p(key, v)?,
            "mix_alpha" => self.loss.alpha = p(key, v)?,
            "beta" => self.loss.beta = p(key, v)?,
            "weight_boundary" => self.weight_boundary = b(key, v)?,
            "dmf" => self.components.dmf = b(key, v)?,
            "ugr" => self.components.ugr = b(key, v)?,
            "refiner" => self.components.refiner = b(key, v)?,
            "bnd" => self.components.bnd = b(key, v)?,
            "udmf" => self.components.udmf = b(key, v)?,
            "ema" => self.components.ema = b(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply every pair of a `key=value` text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Parse a full config over the defaults and validate it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
