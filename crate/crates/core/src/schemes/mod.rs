//! Honest claim generation and scheme-specific scoring for the six schemes.

pub mod adi;
pub mod dawn;
pub mod di;
pub mod ewe;
pub mod lib_b;
pub mod lukas;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{MlpClassifier, TrainConfig};
use crate::protocol::claim::{OwnershipClaim, SchemeKind, TriggerSet};
use crate::protocol::verify::mor_accuracy;
use crate::tensor::Tensor;

pub use adi::adi_claim;
pub use dawn::{dawn_mu, dawn_pi, dawn_record, DawnApi, DawnKey};
pub use di::{di_claim, di_effect, di_embed, DiConfig, MarginRegressor};
pub use ewe::{ewe_claim, TriggerMask};
pub use lib_b::lib_claim;
pub use lukas::{lukas_claim, LukasConfig};

/// Trigger fine-tuning settings for the watermarking schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Trigger samples appended to every training batch.
    pub triggers_per_batch: usize,
    /// Fine-tuning stops once the trigger MOR accuracy reaches this value.
    pub target_accuracy: f64,
    pub max_epochs: usize,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 64,
            triggers_per_batch: 64,
            target_accuracy: 0.95,
            max_epochs: 100,
            l2_penalty: 1e-4,
            seed: 0,
        }
    }
}

impl WatermarkConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: Vec::new(),
            epochs: self.max_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            l2_penalty: self.l2_penalty,
        }
    }
}

/// Fine-tune `model` on base batches with trigger samples mixed in until the
/// trigger MOR accuracy reaches the target.
pub fn embed_watermark(
    model: &MlpClassifier,
    base_x: &Tensor,
    base_y: &[usize],
    trigger: &TriggerSet,
    cfg: &WatermarkConfig,
) -> Result<MlpClassifier> {
    let tc = cfg.train_config();
    let mut m = model.clone();
    for epoch in 0..cfg.max_epochs {
        if mor_accuracy(&m, trigger)? >= cfg.target_accuracy {
            return Ok(m);
        }
        m.train_epoch_with_triggers(base_x, base_y, &trigger.x, &trigger.y, cfg.triggers_per_batch, &tc, epoch)?;
    }
    let acc = mor_accuracy(&m, trigger)?;
    if acc >= cfg.target_accuracy {
        Ok(m)
    } else {
        Err(Error::ClaimGeneration(format!(
            "trigger accuracy {acc:.3} below {} after {} epochs",
            cfg.target_accuracy, cfg.max_epochs
        )))
    }
}

/// The scheme's verification score of `model` on `claim`: MOR accuracy, or
/// the normalized effect size for DI.
pub fn score(model: &MlpClassifier, claim: &OwnershipClaim) -> Result<f64> {
    match claim.scheme {
        SchemeKind::Di => di_effect(model, claim),
        _ => mor_accuracy(model, &claim.trigger),
    }
}

/// Draw `k` distinct indices from `0..n`.
pub(crate) fn sample_indices(n: usize, k: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}

/// A label different from `y`, uniform over the other classes.
pub(crate) fn wrong_label(y: usize, classes: usize, rng: &mut impl rand::Rng) -> usize {
    (y + 1 + rng.random_range(0..classes - 1)) % classes
}
