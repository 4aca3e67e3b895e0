//! Transferable adversarial examples: weighted ensemble losses, iterative
//! gradient-sign optimization and the per-scheme forgery recipes.

pub mod forge;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::tensor::{clip_to_ball, sign, Bounds, Graph, Tensor, Var};

pub use forge::{forge, forge_adi, forge_dawn, forge_di, forge_ewe, forge_lib, forge_lukas, ForgeOutcome};

/// Consecutive all-zero gradients that end an attack early.
pub const ZERO_GRADIENT_PATIENCE: usize = 5;

/// Attack hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L-infinity radius around the starting sample.
    pub epsilon: f64,
    /// Step size per iteration.
    pub alpha: f64,
    pub iterations: usize,
    /// Per-model ensemble weights; `None` means `1 / |ensemble|` each.
    pub beta: Option<Vec<f64>>,
    /// Random restarts for untargeted samples whose label constraint fails.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            alpha: 0.03,
            iterations: 100,
            beta: None,
            restarts: 10,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// A weighted sum of per-model cross-entropy losses.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    terms: Vec<(&'a MlpClassifier, f64)>,
}

impl<'a> Objective<'a> {
    pub fn new(terms: Vec<(&'a MlpClassifier, f64)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("objective needs at least one model"));
        }
        let (d, c) = (terms[0].0.input_dim(), terms[0].0.class_count());
        if terms.iter().any(|(m, _)| m.input_dim() != d || m.class_count() != c) {
            return Err(Error::invalid("all models in an objective must share input and output widths"));
        }
        Ok(Self { terms })
    }

    /// Source loss plus the weighted ensemble losses. `beta` defaults to
    /// `1 / |ensemble|` for every member.
    pub fn ensemble(source: &'a MlpClassifier, ensemble: &[&'a MlpClassifier], beta: Option<&[f64]>) -> Result<Self> {
        let weights: Vec<f64> = match beta {
            Some(b) if b.len() != ensemble.len() => {
                return Err(Error::invalid(format!(
                    "{} ensemble weights for {} models",
                    b.len(),
                    ensemble.len()
                )))
            }
            Some(b) => b.to_vec(),
            None => vec![1.0 / ensemble.len().max(1) as f64; ensemble.len()],
        };
        let mut terms = vec![(source, 1.0)];
        terms.extend(ensemble.iter().copied().zip(weights));
        Self::new(terms)
    }

    pub fn terms(&self) -> &[(&'a MlpClassifier, f64)] {
        &self.terms
    }

    fn build(&self, g: &mut Graph, x: Var, y: &[usize]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for &(m, w) in &self.terms {
            let logits = m.logits_var(g, x)?;
            let l = g.softmax_xent(logits, y)?;
            let l = g.scale(l, w)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        Ok(total.expect("objective has at least one term"))
    }

    /// Batch-mean objective value.
    pub fn loss(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let l = self.build(&mut g, xv, y)?;
        Ok(g.value(l).item())
    }

    /// Objective value and its gradient with respect to `x`.
    pub fn loss_and_grad(&self, x: &Tensor, y: &[usize]) -> Result<(f64, Tensor)> {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let l = self.build(&mut g, xv, y)?;
        let mut grads = g.backward(l)?;
        let gx = grads.take(xv).expect("input is a leaf on the loss path");
        Ok((g.value(l).item(), gx))
    }
}

/// `L(F_A(x), y) + sum_F beta_F L(F(x), y)`, averaged over the batch.
pub fn ensemble_loss(
    x: &Tensor,
    y: &[usize],
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    beta: Option<&[f64]>,
) -> Result<f64> {
    Objective::ensemble(source, ensemble, beta)?.loss(x, y)
}

/// Whether the attack ascends or descends the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepDirection {
    /// Untargeted: push away from the given labels.
    Maximize,
    /// Targeted: pull toward the given labels.
    Minimize,
}

/// Result of an iterative attack.
#[derive(Debug, Clone)]
pub struct IfgsmOutcome {
    pub x_hat: Tensor,
    pub iterations_run: usize,
    pub early_stopped: bool,
}

/// Iterative fast gradient sign method within the `epsilon` ball around `x`
/// and the unit box. `start` overrides the starting point (it is projected).
pub fn ifgsm(
    x: &Tensor,
    y: &[usize],
    objective: &Objective<'_>,
    cfg: &AttackConfig,
    direction: StepDirection,
    start: Option<&Tensor>,
) -> Result<IfgsmOutcome> {
    cfg.validate()?;
    let bounds = Bounds::unit();
    let mut x_hat = match start {
        Some(s) => clip_to_ball(s, x, cfg.epsilon, &bounds)?,
        None => x.clone(),
    };
    let step = match direction {
        StepDirection::Maximize => cfg.alpha,
        StepDirection::Minimize => -cfg.alpha,
    };
    let mut zero_streak = 0;
    for t in 0..cfg.iterations {
        let (_, g) = objective.loss_and_grad(&x_hat, y)?;
        if g.data().iter().all(|&v| v == 0.0) {
            zero_streak += 1;
            if zero_streak >= ZERO_GRADIENT_PATIENCE {
                return Ok(IfgsmOutcome {
                    x_hat,
                    iterations_run: t + 1,
                    early_stopped: true,
                });
            }
            continue;
        }
        zero_streak = 0;
        let s = sign(&g);
        let moved: Vec<f64> = x_hat
            .data()
            .iter()
            .zip(s.data())
            .map(|(&v, &d)| v + step * d)
            .collect();
        x_hat = clip_to_ball(&Tensor::new(x_hat.shape().to_vec(), moved)?, x, cfg.epsilon, &bounds)?;
    }
    Ok(IfgsmOutcome {
        x_hat,
        iterations_run: cfg.iterations,
        early_stopped: false,
    })
}

/// A uniformly random point of the `epsilon` ball around `x`, inside the box.
pub fn random_start(x: &Tensor, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let data = x
        .data()
        .iter()
        .map(|&v| v + rng.random_range(-1.0..=1.0) * epsilon)
        .collect();
    clip_to_ball(&Tensor::new(x.shape().to_vec(), data)?, x, epsilon, &Bounds::unit())
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
