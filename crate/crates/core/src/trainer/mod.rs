//! Optimization machinery and the training regimes: STS adaptation,
//! contrastive grounding, self-distillation onto PCA-reduced teacher targets,
//! and cross-lingual distillation.
//!
//! Every trainer is a deterministic function of its inputs and `seed`.
//! Per-example gradients are accumulated sequentially in batch order.

mod contrastive;
mod distill;
mod optim;
mod pca;
mod sts;
mod xlingual;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::encoder::{Gradient, Params};
use crate::error::{Error, Result};
use crate::losses::InfoNceConfig;
use crate::rng;

pub use contrastive::{plan_batches, train_contrastive, ContrastivePlan};
pub use distill::{
    build_targets, distill_examples, distill_loss, teacher_raw, train_self_distill, DistillTarget, DEFAULT_TARGET_DIM,
};
pub use optim::{warmup_linear, AdamW, BETA1, BETA2, EPSILON};
pub use pca::{pca_fit, PcaModel};
pub use sts::adapt_sts;
pub use xlingual::{train_xlingual, xlingual_gap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hard_negatives_per_batch: usize,
    pub info_nce: InfoNceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            warmup_fraction: 0.05,
            epochs: 1,
            batch_size: 128,
            seed: 0,
            hard_negatives_per_batch: 0,
            info_nce: InfoNceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "learning_rate",
        "weight_decay",
        "warmup_fraction",
        "epochs",
        "batch_size",
        "seed",
        "hard_negatives_per_batch",
        "info_nce.scale",
        "info_nce.symmetric",
    ];

    /// Contrastive phase defaults (1 epoch).
    pub fn contrastive() -> Self {
        Self::default()
    }

    /// Self-distillation defaults (5 epochs).
    pub fn self_distill() -> Self {
        Self {
            epochs: 5,
            ..Self::default()
        }
    }

    /// Cross-lingual distillation defaults (10 epochs).
    pub fn xlingual() -> Self {
        Self {
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.info_nce.scale.is_finite() && self.info_nce.scale > 0.0) {
            return Err(Error::Config("info_nce.scale must be positive".into()));
        }
        Ok(())
    }

    /// Overrides fields from `kv`; keys match the field names.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.check_known(Self::KEYS)?;
        kv.apply("learning_rate", &mut self.learning_rate)?;
        kv.apply("weight_decay", &mut self.weight_decay)?;
        kv.apply("warmup_fraction", &mut self.warmup_fraction)?;
        kv.apply("epochs", &mut self.epochs)?;
        kv.apply("batch_size", &mut self.batch_size)?;
        kv.apply("seed", &mut self.seed)?;
        kv.apply("hard_negatives_per_batch", &mut self.hard_negatives_per_batch)?;
        kv.apply("info_nce.scale", &mut self.info_nce.scale)?;
        kv.apply("info_nce.symmetric", &mut self.info_nce.symmetric)?;
        self.validate()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("learning_rate", self.learning_rate.to_string());
        kv.set("weight_decay", self.weight_decay.to_string());
        kv.set("warmup_fraction", self.warmup_fraction.to_string());
        kv.set("epochs", self.epochs.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("seed", self.seed.to_string());
        kv.set("hard_negatives_per_batch", self.hard_negatives_per_batch.to_string());
        kv.set("info_nce.scale", self.info_nce.scale.to_string());
        kv.set("info_nce.symmetric", self.info_nce.symmetric.to_string());
        kv
    }
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: crate::encoder::Checkpoint,
    pub steps: usize,
    /// Mean minibatch loss of the final epoch (NaN if no step ran).
    pub final_loss: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Full-training-set loss before training and after each epoch
    /// (self-distillation only; empty otherwise).
    pub full_losses: Vec<f64>,
}

/// AdamW driven by the warmup-linear schedule over a known step budget.
pub(crate) struct Stepper {
    adamw: AdamW,
    total_steps: usize,
    step: usize,
    base_lr: f64,
    warmup_fraction: f64,
}

impl Stepper {
    pub(crate) fn new(params: &Params, cfg: &TrainConfig, total_steps: usize) -> Self {
        Self {
            adamw: AdamW::new(params, cfg.weight_decay),
            total_steps,
            step: 0,
            base_lr: cfg.learning_rate,
            warmup_fraction: cfg.warmup_fraction,
        }
    }

    pub(crate) fn apply(&mut self, params: &mut Params, grad: &Gradient) -> Result<()> {
        let lr = warmup_linear(self.step, self.total_steps, self.base_lr, self.warmup_fraction);
        self.adamw.update(params, grad, lr)?;
        self.step += 1;
        Ok(())
    }

    pub(crate) fn steps(&self) -> usize {
        self.step
    }
}

/// Shuffled index order for `epoch`.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(rng::derive(seed, epoch as u64));
    order.shuffle(&mut r);
    order
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
