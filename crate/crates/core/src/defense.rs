//! Countermeasures: judge-side screening of trigger sets with held-out
//! independent models, and PGD adversarial training of a suspect.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attack::{random_start, rng_for};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{MlpClassifier, TrainConfig};
use crate::protocol::claim::OwnershipClaim;
use crate::protocol::thresholds::{DecisionThresholds, ThresholdKind};
use crate::schemes;
use crate::tensor::{clip_to_ball, sign, Bounds, Tensor};

/// Judge-trained independent models that are never published.
#[derive(Debug, Clone)]
pub struct ScreeningPolicy<'a> {
    pub holdout_independents: Vec<&'a MlpClassifier>,
    /// Fraction of holdouts that must exceed the mixed threshold to flag.
    pub flag_threshold: f64,
}

impl<'a> ScreeningPolicy<'a> {
    pub fn new(holdout_independents: Vec<&'a MlpClassifier>) -> Self {
        Self {
            holdout_independents,
            flag_threshold: 1.0,
        }
    }

    /// Reject policies whose holdouts collide with any party-supplied model.
    pub fn check_disjoint(&self, party_models: &[&MlpClassifier]) -> Result<()> {
        for h in &self.holdout_independents {
            let d = h.digest();
            if party_models.iter().any(|m| m.digest() == d) {
                return Err(Error::invalid("holdout model is also supplied by a party"));
            }
        }
        Ok(())
    }
}

/// Screening decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScreenOutcome {
    HonestConsistent,
    AdversarialFlagged,
}

/// Machine-readable reason attached to a screening decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenReason {
    /// Enough holdout independents verify the claim to flag it.
    HoldoutsVerifyClaim,
    /// Too few holdout independents verify the claim.
    HoldoutsRejectClaim,
}

impl fmt::Display for ScreenReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HoldoutsVerifyClaim => "holdouts_verify_claim",
            Self::HoldoutsRejectClaim => "holdouts_reject_claim",
        })
    }
}

/// Screening result with per-holdout scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenVerdict {
    pub outcome: ScreenOutcome,
    pub reason: ScreenReason,
    pub holdout_scores: Vec<f64>,
    pub exceeding: usize,
    pub threshold: f64,
}

impl ScreenVerdict {
    pub fn flagged(&self) -> bool {
        self.outcome == ScreenOutcome::AdversarialFlagged
    }
}

/// Score every holdout independent on the claim and flag it when the
/// fraction exceeding the scheme's mixed threshold reaches the policy's
/// flag threshold.
pub fn screen_trigger_set(
    claim: &OwnershipClaim,
    policy: &ScreeningPolicy<'_>,
    thresholds: &DecisionThresholds,
) -> Result<ScreenVerdict> {
    if policy.holdout_independents.len() < 2 {
        return Err(Error::invalid("screening needs at least 2 holdout independents"));
    }
    if !(0.0..=1.0).contains(&policy.flag_threshold) {
        return Err(Error::invalid(format!(
            "flag_threshold must be in [0, 1], got {}",
            policy.flag_threshold
        )));
    }
    if claim.trigger.is_empty() {
        return Err(Error::EmptyTriggerSet);
    }
    let holdout_scores = policy
        .holdout_independents
        .iter()
        .map(|m| schemes::score(m, claim))
        .collect::<Result<Vec<_>>>()?;
    let exceeding = holdout_scores
        .iter()
        .filter(|&&s| thresholds.exceeds(s, ThresholdKind::Mixed))
        .count();
    let fraction = exceeding as f64 / holdout_scores.len() as f64;
    let flagged = fraction >= policy.flag_threshold;
    Ok(ScreenVerdict {
        outcome: if flagged {
            ScreenOutcome::AdversarialFlagged
        } else {
            ScreenOutcome::HonestConsistent
        },
        reason: if flagged {
            ScreenReason::HoldoutsVerifyClaim
        } else {
            ScreenReason::HoldoutsRejectClaim
        },
        holdout_scores,
        exceeding,
        threshold: thresholds.mixed,
    })
}

/// Inner-loop settings for PGD adversarial training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub epochs: usize,
}

impl PgdConfig {
    /// 10 steps of size `epsilon / 4` for 20 epochs.
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: 10,
            step_size: epsilon / 4.0,
            epochs: 20,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.epsilon > 0.0 && (self.steps == 0 || !(self.step_size > 0.0)) {
            return Err(Error::invalid("PGD needs steps >= 1 and step_size > 0"));
        }
        Ok(())
    }
}

/// Maximize the model's loss on a batch: random start in the ball, then
/// projected sign-gradient ascent.
pub fn pgd_perturb(
    model: &MlpClassifier,
    x: &Tensor,
    y: &[usize],
    pgd: &PgdConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Tensor> {
    if pgd.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let bounds = Bounds::unit();
    let mut x_hat = random_start(x, pgd.epsilon, rng)?;
    for _ in 0..pgd.steps {
        let (_, g) = model.input_gradient(&x_hat, y)?;
        let moved: Vec<f64> = x_hat
            .data()
            .iter()
            .zip(sign(&g).data())
            .map(|(&v, &s)| v + pgd.step_size * s)
            .collect();
        x_hat = clip_to_ball(&Tensor::new(x.shape().to_vec(), moved)?, x, pgd.epsilon, &bounds)?;
    }
    Ok(x_hat)
}

/// Train from scratch with every batch replaced by its PGD perturbation.
/// `cfg.epochs` is ignored in favour of `pgd.epochs`; with `epsilon = 0`
/// this is plain training.
pub fn adversarial_train_pgd(ds: &Dataset, cfg: &TrainConfig, pgd: &PgdConfig) -> Result<MlpClassifier> {
    cfg.validate()?;
    pgd.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut dims = vec![ds.dim()];
    dims.extend(&cfg.hidden);
    dims.push(ds.class_count());
    let mut model = MlpClassifier::init(&dims, cfg.seed, cfg.learning_rate)?;
    let mut rng = rng_for(cfg.seed, 21);
    for epoch in 0..pgd.epochs {
        model.train_epoch_perturbed(ds.features(), ds.labels(), cfg, epoch, |m, bx, by| {
            pgd_perturb(m, bx, by, pgd, &mut rng)
        })?;
    }
    Ok(model)
}
