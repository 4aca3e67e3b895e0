//! False-claim recipes: one per scheme, each producing a committed claim
//! whose trigger set is made of transferable adversarial examples.

use rand::Rng;

use crate::attack::{ifgsm, random_start, rng_for, AttackConfig, Objective, StepDirection};
use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::protocol::claim::{OwnershipClaim, SchemeKind, TriggerSet};
use crate::schemes::dawn::{dawn_mu, dawn_pi, hmac_digest, is_selected, DawnKey, LEVELS};
use crate::schemes::di::{build_claim as build_di_claim, mean_margin, DiConfig, Samples};
use crate::schemes::{dawn, ewe, lib_b, lukas, sample_indices};
use crate::tensor::{clip_to_ball, sign, Bounds, Tensor};

/// Candidate batches drawn before a forger gives up on filling the set.
pub const MAX_ROUNDS: usize = 5;
/// Minimum fraction of attacked candidates the source must map to the target.
pub const MIN_TARGET_ACCURACY: f64 = 0.9;
/// Random jitters tried per sample when searching for watermark-selected queries.
pub const DAWN_JITTERS: usize = 2000;
/// Length of the sign step that places DAWN candidates toward their target.
pub const DAWN_LEAD: f64 = 0.05;

/// A forged claim plus bookkeeping about how it was produced.
#[derive(Debug, Clone)]
pub struct ForgeOutcome {
    pub claim: OwnershipClaim,
    /// Samples that went through the attack.
    pub candidates: usize,
    /// Samples kept in the trigger set.
    pub retained: usize,
    /// Attacked samples on which the source produced the intended label.
    pub source_successes: usize,
    /// DAWN only: successful samples whose quantization was preserved.
    pub mu_preserved: usize,
}

impl ForgeOutcome {
    /// Fraction of successful samples whose quantization was preserved.
    pub fn mu_retention(&self) -> f64 {
        if self.source_successes == 0 {
            0.0
        } else {
            self.mu_preserved as f64 / self.source_successes as f64
        }
    }
}

/// Everything a forger may need; fields unused by a scheme are ignored.
#[derive(Debug, Clone)]
pub struct ForgeInputs<'a> {
    pub source: &'a MlpClassifier,
    pub ensemble: Vec<&'a MlpClassifier>,
    /// The attacker's own data (members for DI).
    pub data: &'a Dataset,
    /// Public data for DI.
    pub public: Option<&'a Dataset>,
    pub size: usize,
    pub attack: AttackConfig,
    /// Perturbation bound for the Li(b) scheme, matching its honest bound.
    pub lib_epsilon: f64,
    pub dawn_key: DawnKey,
    pub dawn_rate: f64,
    pub di: DiConfig,
    pub accuser_id: String,
}

/// Dispatch to the scheme's recipe.
pub fn forge(scheme: SchemeKind, inp: &ForgeInputs<'_>) -> Result<ForgeOutcome> {
    let id = inp.accuser_id.as_str();
    match scheme {
        SchemeKind::Adi => forge_adi(inp.source, &inp.ensemble, inp.data, inp.size, &inp.attack, id),
        SchemeKind::Lukas => forge_lukas(inp.source, &inp.ensemble, inp.data, inp.size, &inp.attack, id),
        SchemeKind::Ewe => forge_ewe(inp.source, &inp.ensemble, inp.data, inp.size, &inp.attack, id),
        SchemeKind::Lib => {
            let cfg = AttackConfig {
                epsilon: inp.lib_epsilon,
                ..inp.attack.clone()
            };
            forge_lib(inp.source, &inp.ensemble, inp.data, inp.size, &cfg, id)
        }
        SchemeKind::Dawn => forge_dawn(
            inp.source,
            &inp.ensemble,
            inp.dawn_key,
            inp.dawn_rate,
            inp.data,
            inp.size,
            &inp.attack,
            id,
        ),
        SchemeKind::Di => {
            let public = inp
                .public
                .ok_or_else(|| Error::invalid("DI forging needs a public dataset"))?;
            forge_di(inp.source, &inp.ensemble, inp.data, public, inp.size, inp.size, &inp.attack, &inp.di, id)
        }
    }
}

struct Collected {
    rows: Vec<Vec<f64>>,
    y: Vec<usize>,
    truth: Vec<Truth>,
    candidates: usize,
    successes: usize,
}

impl Collected {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            y: Vec::new(),
            truth: Vec::new(),
            candidates: 0,
            successes: 0,
        }
    }

    fn push(&mut self, row: &[f64], y: usize, truth: Truth) {
        self.rows.push(row.to_vec());
        self.y.push(y);
        self.truth.push(truth);
    }

    fn trigger(&self) -> Result<TriggerSet> {
        if self.y.is_empty() {
            return Err(Error::ClaimGeneration("no adversarial sample satisfied the label constraint".into()));
        }
        TriggerSet::new(Tensor::from_rows(&self.rows)?, self.y.clone(), self.truth.clone())
    }
}

/// Untargeted recipe shared by Adi and Lukas: maximize the ensemble loss at
/// the true labels, label each result with the source's new prediction and
/// keep it only when that prediction differs from the ground truth. Failed
/// samples are retried from random starts inside the ball.
fn forge_untargeted(
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    ds: &Dataset,
    size: usize,
    cfg: &AttackConfig,
) -> Result<Collected> {
    if size == 0 {
        return Err(Error::invalid("trigger size must be >= 1"));
    }
    let objective = Objective::ensemble(source, ensemble, cfg.beta.as_deref())?;
    let mut rng = rng_for(cfg.seed, 11);
    let mut out = Collected::new();
    for _ in 0..MAX_ROUNDS {
        let need = size - out.y.len();
        if need == 0 {
            break;
        }
        let idx = sample_indices(ds.len(), need, &mut rng);
        let x = ds.features().select_rows(&idx);
        let y_true: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
        out.candidates += idx.len();
        let mut x_hat = ifgsm(&x, &y_true, &objective, cfg, StepDirection::Maximize, None)?.x_hat;
        let mut pred = source.predict(&x_hat)?;
        let mut pending: Vec<usize> = (0..idx.len()).filter(|&k| pred[k] == y_true[k]).collect();
        for _ in 0..cfg.restarts {
            if pending.is_empty() || cfg.epsilon == 0.0 {
                break;
            }
            let xp = x.select_rows(&pending);
            let yp: Vec<usize> = pending.iter().map(|&k| y_true[k]).collect();
            let start = random_start(&xp, cfg.epsilon, &mut rng)?;
            let retry = ifgsm(&xp, &yp, &objective, cfg, StepDirection::Maximize, Some(&start))?.x_hat;
            let rp = source.predict(&retry)?;
            let mut data = x_hat.data().to_vec();
            let d = x.cols();
            let mut still = Vec::new();
            for (r, &k) in pending.iter().enumerate() {
                if rp[r] != y_true[k] {
                    data[k * d..(k + 1) * d].copy_from_slice(retry.row(r));
                    pred[k] = rp[r];
                } else {
                    still.push(k);
                }
            }
            x_hat = Tensor::new(x_hat.shape().to_vec(), data)?;
            pending = still;
        }
        if !pending.is_empty() {
            log::info!("dropping {} samples the source still classifies correctly", pending.len());
        }
        for k in 0..idx.len() {
            if pred[k] != y_true[k] {
                out.successes += 1;
                out.push(x_hat.row(k), pred[k], Truth::Class(y_true[k]));
            }
        }
    }
    Ok(out)
}

fn outcome(claim: OwnershipClaim, c: &Collected, mu_preserved: usize) -> ForgeOutcome {
    ForgeOutcome {
        retained: claim.trigger.len(),
        claim,
        candidates: c.candidates,
        source_successes: c.successes,
        mu_preserved,
    }
}

/// Forge an Adi-style claim from untargeted adversarial examples.
pub fn forge_adi(
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    ds: &Dataset,
    size: usize,
    cfg: &AttackConfig,
    accuser_id: &str,
) -> Result<ForgeOutcome> {
    let c = forge_untargeted(source, ensemble, ds, size, cfg)?;
    let claim = OwnershipClaim::commit(accuser_id, source.digest(), SchemeKind::Adi, c.trigger()?, Vec::new());
    Ok(outcome(claim, &c, 0))
}

/// Forge a fingerprint claim from untargeted adversarial examples.
pub fn forge_lukas(
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    ds: &Dataset,
    size: usize,
    cfg: &AttackConfig,
    accuser_id: &str,
) -> Result<ForgeOutcome> {
    let c = forge_untargeted(source, ensemble, ds, size, cfg)?;
    let claim = OwnershipClaim::commit(
        accuser_id,
        source.digest(),
        SchemeKind::Lukas,
        c.trigger()?,
        lukas::encode_aux(cfg.epsilon),
    );
    Ok(outcome(claim, &c, 0))
}

/// Targeted attack on a batch; returns the perturbed batch and the source's
/// predictions on it. Rejects when the source reaches the targets on fewer
/// than [`MIN_TARGET_ACCURACY`] of the samples.
fn targeted_batch(
    objective: &Objective<'_>,
    source: &MlpClassifier,
    x: &Tensor,
    target: &[usize],
    cfg: &AttackConfig,
) -> Result<(Tensor, Vec<usize>)> {
    let x_hat = ifgsm(x, target, objective, cfg, StepDirection::Minimize, None)?.x_hat;
    let pred = source.predict(&x_hat)?;
    Ok((x_hat, pred))
}

fn check_target_accuracy(successes: usize, candidates: usize) -> Result<()> {
    let acc = successes as f64 / candidates.max(1) as f64;
    if acc < MIN_TARGET_ACCURACY {
        return Err(Error::ClaimGeneration(format!(
            "source reached the target label on {successes} of {candidates} samples ({acc:.3} < {MIN_TARGET_ACCURACY})"
        )));
    }
    Ok(())
}

/// Forge an EWE-style claim: samples of one class pushed to one target class.
/// The pair is the two classes whose means in the attacker's data are closest.
pub fn forge_ewe(
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    ds: &Dataset,
    size: usize,
    cfg: &AttackConfig,
    accuser_id: &str,
) -> Result<ForgeOutcome> {
    if size == 0 {
        return Err(Error::invalid("trigger size must be >= 1"));
    }
    let (from, to) = closest_class_pair(ds);
    let pool = ds.indices_of(from);
    let objective = Objective::ensemble(source, ensemble, cfg.beta.as_deref())?;
    let mut rng = rng_for(cfg.seed, 12);
    let mut out = Collected::new();
    let idx: Vec<usize> = sample_indices(pool.len(), size, &mut rng)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    let x = ds.features().select_rows(&idx);
    let target = vec![to; idx.len()];
    let (x_hat, pred) = targeted_batch(&objective, source, &x, &target, cfg)?;
    out.candidates = idx.len();
    for k in 0..idx.len() {
        if pred[k] == to {
            out.successes += 1;
            out.push(x_hat.row(k), to, Truth::Class(from));
        }
    }
    check_target_accuracy(out.successes, out.candidates)?;
    let shift = mean_shift(&x, &x_hat);
    let claim = OwnershipClaim::commit(
        accuser_id,
        source.digest(),
        SchemeKind::Ewe,
        out.trigger()?,
        ewe::encode_aux(&shift, from, to),
    );
    Ok(outcome(claim, &out, 0))
}

/// Per-feature mean of `x_hat - x`.
fn mean_shift(x: &Tensor, x_hat: &Tensor) -> Vec<f64> {
    (0..x.cols())
        .map(|j| (0..x.rows()).map(|i| x_hat.row(i)[j] - x.row(i)[j]).sum::<f64>() / x.rows() as f64)
        .collect()
}

fn closest_class_pair(ds: &Dataset) -> (usize, usize) {
    let means = class_means(ds);
    let mut best = (0, 1, f64::INFINITY);
    for a in 0..means.len() {
        for b in (a + 1)..means.len() {
            let d = crate::data::sq_dist(&means[a], &means[b]);
            if d < best.2 {
                best = (a, b, d);
            }
        }
    }
    (best.0, best.1)
}

fn class_means(ds: &Dataset) -> Vec<Vec<f64>> {
    let d = ds.dim();
    let mut sums = vec![vec![0.0; d]; ds.class_count()];
    let mut counts = vec![0usize; ds.class_count()];
    for i in 0..ds.len() {
        let l = ds.labels()[i];
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(ds.features().row(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c.max(1) as f64;
        }
    }
    sums
}

/// Forge a Li(b)-style claim: each sample pushed, within the scheme's bound,
/// to the class the attacker's models rank second on it.
pub fn forge_lib(
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    ds: &Dataset,
    size: usize,
    cfg: &AttackConfig,
    accuser_id: &str,
) -> Result<ForgeOutcome> {
    if size == 0 {
        return Err(Error::invalid("trigger size must be >= 1"));
    }
    let objective = Objective::ensemble(source, ensemble, cfg.beta.as_deref())?;
    let mut rng = rng_for(cfg.seed, 13);
    let idx = sample_indices(ds.len(), size, &mut rng);
    let x = ds.features().select_rows(&idx);
    let truth: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
    let target = runner_up(source, ensemble, &x, &truth)?;
    let (x_hat, pred) = targeted_batch(&objective, source, &x, &target, cfg)?;
    let mut out = Collected::new();
    out.candidates = idx.len();
    for k in 0..idx.len() {
        if pred[k] == target[k] {
            out.successes += 1;
            out.push(x_hat.row(k), target[k], Truth::Class(truth[k]));
        }
    }
    check_target_accuracy(out.successes, out.candidates)?;
    let pattern: Vec<f64> = mean_shift(&x, &x_hat)
        .into_iter()
        .map(|v| if v < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let claim = OwnershipClaim::commit(
        accuser_id,
        source.digest(),
        SchemeKind::Lib,
        out.trigger()?,
        lib_b::encode_aux(cfg.epsilon, &pattern),
    );
    Ok(outcome(claim, &out, 0))
}

/// The most probable class other than the ground truth under the averaged
/// softmax of the source and the ensemble.
fn runner_up(source: &MlpClassifier, ensemble: &[&MlpClassifier], x: &Tensor, truth: &[usize]) -> Result<Vec<usize>> {
    let c = source.class_count();
    let mut avg = vec![0.0; x.rows() * c];
    for m in std::iter::once(source).chain(ensemble.iter().copied()) {
        let p = m.predict_proba(x)?;
        for (a, v) in avg.iter_mut().zip(p.data()) {
            *a += v;
        }
    }
    Ok((0..x.rows())
        .map(|i| {
            let row = &avg[i * c..(i + 1) * c];
            let mut best = if truth[i] == 0 { 1 } else { 0 };
            for k in 0..c {
                if k != truth[i] && row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Per-feature bounds of the quantization cell containing `x`, intersected
/// with the unit box.
fn mu_cell(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(x.len());
    let mut hi = Vec::with_capacity(x.len());
    for &v in x {
        let q = (v * LEVELS).floor().clamp(0.0, LEVELS - 1.0);
        lo.push(q / LEVELS);
        let top = (q + 1.0) / LEVELS;
        hi.push(if q + 1.0 >= LEVELS { 1.0 } else { top.next_down() });
    }
    (lo, hi)
}

/// Forge a DAWN claim under the attacker's own key. Candidates start from the
/// attacker's samples with the smallest source margin between their two top
/// classes, take one sign step toward the runner-up class and are jittered
/// until the key selects them and maps their label to the runner-up class. The targeted attack is confined to the
/// intersection of the ball and the candidate's quantization cell; samples
/// whose quantization still changes are discarded.
#[allow(clippy::too_many_arguments)]
pub fn forge_dawn(
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    key: DawnKey,
    rate: f64,
    ds: &Dataset,
    size: usize,
    cfg: &AttackConfig,
    accuser_id: &str,
) -> Result<ForgeOutcome> {
    if size == 0 {
        return Err(Error::invalid("trigger size must be >= 1"));
    }
    let c = source.class_count();
    let objective = Objective::ensemble(source, ensemble, cfg.beta.as_deref())?;
    let mut rng = rng_for(cfg.seed, 14);

    // samples ordered by the source's top-2 logit gap
    let logits = source.predict_logits(ds.features())?;
    let mut order: Vec<(f64, usize, usize, usize)> = (0..ds.len())
        .map(|i| {
            let row = logits.row(i);
            let mut idx: Vec<usize> = (0..c).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            (row[idx[0]] - row[idx[1]], i, idx[0], idx[1])
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let jitter = 0.5 / LEVELS;
    let mut cand_x: Vec<Vec<f64>> = Vec::new();
    let mut cand_y: Vec<usize> = Vec::new();
    let mut cand_orig: Vec<usize> = Vec::new();
    let mut cand_truth: Vec<usize> = Vec::new();
    let budget = size * 2;
    for &(_, i, top, second) in &order {
        if cand_x.len() >= budget {
            break;
        }
        // start one gradient-sign step toward the runner-up class
        let base = Tensor::from_rows(&[ds.features().row(i).to_vec()])?;
        let (_, g) = objective.loss_and_grad(&base, &[second])?;
        let toward: Vec<f64> = base
            .data()
            .iter()
            .zip(sign(&g).data())
            .map(|(&v, &s)| v - DAWN_LEAD * s)
            .collect();
        for _ in 0..DAWN_JITTERS {
            let xj: Vec<f64> = toward
                .iter()
                .map(|&v| (v + rng.random_range(-jitter..=jitter)).clamp(0.0, 1.0))
                .collect();
            let digest = hmac_digest(&key, &dawn_mu(&xj));
            if !is_selected(&digest, rate) || dawn_pi(&digest, top, c)? != second {
                continue;
            }
            if source.predict(&Tensor::from_rows(&[xj.clone()])?)?[0] != top {
                continue;
            }
            cand_x.push(xj);
            cand_y.push(second);
            cand_orig.push(top);
            cand_truth.push(ds.labels()[i]);
            break;
        }
    }
    if cand_x.is_empty() {
        return Err(Error::ClaimGeneration("no watermark-selected candidate found".into()));
    }

    let x = Tensor::from_rows(&cand_x)?;
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for row in &cand_x {
        let (l, h) = mu_cell(row);
        lo.extend(l);
        hi.extend(h);
    }
    let x_hat = cell_ifgsm(&objective, &x, &cand_y, cfg, &lo, &hi)?;
    let pred = source.predict(&x_hat)?;
    let mut out = Collected::new();
    out.candidates = cand_x.len();
    let mut preserved = 0;
    let mut original = Vec::new();
    for k in 0..cand_x.len() {
        if pred[k] != cand_y[k] {
            continue;
        }
        out.successes += 1;
        if dawn_mu(x_hat.row(k)) != dawn_mu(&cand_x[k]) {
            continue;
        }
        preserved += 1;
        if out.y.len() < size {
            out.push(x_hat.row(k), cand_y[k], Truth::Class(cand_truth[k]));
            original.push(cand_orig[k]);
        }
    }
    check_target_accuracy(out.successes, out.candidates)?;
    let claim = OwnershipClaim::commit(
        accuser_id,
        source.digest(),
        SchemeKind::Dawn,
        out.trigger()?,
        dawn::encode_aux(&key, rate, c, &original),
    );
    Ok(outcome(claim, &out, preserved))
}

/// Targeted sign-gradient descent projected onto the ball and per-feature
/// cell bounds.
fn cell_ifgsm(
    objective: &Objective<'_>,
    x: &Tensor,
    target: &[usize],
    cfg: &AttackConfig,
    lo: &[f64],
    hi: &[f64],
) -> Result<Tensor> {
    let mut x_hat = x.clone();
    for _ in 0..cfg.iterations {
        let (_, g) = objective.loss_and_grad(&x_hat, target)?;
        let s = sign(&g);
        let moved: Vec<f64> = x_hat
            .data()
            .iter()
            .zip(s.data())
            .map(|(&v, &dir)| v - cfg.alpha * dir)
            .collect();
        let ball = clip_to_ball(&Tensor::new(x.shape().to_vec(), moved)?, x, cfg.epsilon, &Bounds::unit())?;
        let data = ball
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(lo[i], hi[i]))
            .collect();
        x_hat = Tensor::new(x.shape().to_vec(), data)?;
    }
    Ok(x_hat)
}

/// Forge a DI claim: the attacker's members are pushed deeper into their own
/// class by minimizing the ensemble loss at the true labels, then the
/// regressor is fitted on the perturbed members against public samples.
#[allow(clippy::too_many_arguments)]
pub fn forge_di(
    source: &MlpClassifier,
    ensemble: &[&MlpClassifier],
    member_ds: &Dataset,
    public_ds: &Dataset,
    members: usize,
    public: usize,
    cfg: &AttackConfig,
    di: &DiConfig,
    accuser_id: &str,
) -> Result<ForgeOutcome> {
    if members < 2 || public < 2 {
        return Err(Error::invalid("need at least 2 member and 2 public samples"));
    }
    if 2 * members > member_ds.len() || 2 * public > public_ds.len() {
        return Err(Error::invalid("not enough samples for disjoint fit and evaluation draws"));
    }
    let objective = Objective::ensemble(source, ensemble, cfg.beta.as_deref())?;
    let mut rng = rng_for(cfg.seed, 15);
    let mi = sample_indices(member_ds.len(), 2 * members, &mut rng);
    let pi = sample_indices(public_ds.len(), 2 * public, &mut rng);
    let m = member_ds.subset(&mi);
    let x_hat = ifgsm(m.features(), m.labels(), &objective, cfg, StepDirection::Minimize, None)?.x_hat;
    let before = mean_margin(source, m.features(), m.labels())?;
    let after = mean_margin(source, &x_hat, m.labels())?;
    if !(after > before) {
        return Err(Error::ClaimGeneration(format!(
            "mean margin did not increase ({before:.4} -> {after:.4})"
        )));
    }
    let fit_idx: Vec<usize> = (0..members).collect();
    let eval_idx: Vec<usize> = (members..2 * members).collect();
    let (x_fit, x_eval) = (x_hat.select_rows(&fit_idx), x_hat.select_rows(&eval_idx));
    let truth = m.truth();
    let (p_fit, p_eval) = (public_ds.subset(&pi[..public]), public_ds.subset(&pi[public..]));
    let claim = build_di_claim(
        source,
        (
            Samples {
                x: &x_fit,
                y: &m.labels()[..members],
                truth: truth[..members].to_vec(),
            },
            Samples::of(&p_fit),
        ),
        (
            Samples {
                x: &x_eval,
                y: &m.labels()[members..],
                truth: truth[members..].to_vec(),
            },
            Samples::of(&p_eval),
        ),
        di,
        accuser_id,
    )?;
    Ok(ForgeOutcome {
        retained: claim.trigger.len(),
        claim,
        candidates: members,
        source_successes: members,
        mu_preserved: 0,
    })
}
