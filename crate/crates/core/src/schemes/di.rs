//! Dataset inference: membership evidence from distances to decision
//! boundaries, scored by a regressor and summarized as an effect size.

use serde::{Deserialize, Serialize};

use crate::attack::rng_for;
use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::protocol::claim::{AuxReader, AuxWriter, OwnershipClaim, SchemeKind, TriggerSet};
use crate::schemes::sample_indices;
use crate::tensor::{Graph, Tensor};

/// Margin embedding and regressor settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiConfig {
    /// L2 length of every gradient step.
    pub step: f64,
    pub max_steps: usize,
    /// Distances are capped at this value.
    pub cap: f64,
    /// Bisection iterations used to locate the crossing point.
    pub bisection: usize,
    pub regressor_iterations: usize,
    pub regressor_lr: f64,
    pub regressor_l2: f64,
}

impl Default for DiConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            max_steps: 20,
            cap: 1.0,
            bisection: 12,
            regressor_iterations: 400,
            regressor_lr: 0.5,
            regressor_l2: 1e-3,
        }
    }
}

/// For every sample and every class `j` other than its label, the L2 length
/// of the perturbation found by normalized gradient steps on
/// `logit_j - max_{k != j} logit_k` that first makes `j` the prediction,
/// refined by bisection and capped at `cfg.cap`. Returns `[n, C - 1]`; each
/// row is sorted ascending so that features do not depend on class identity.
pub fn di_embed(model: &MlpClassifier, x: &Tensor, y: &[usize], cfg: &DiConfig) -> Result<Tensor> {
    let n = x.rows();
    let c = model.class_count();
    if y.len() != n {
        return Err(Error::ShapeMismatch {
            op: "di_embed",
            left: x.shape().to_vec(),
            right: vec![y.len()],
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let mut out = vec![cfg.cap; n * (c - 1)];
    for j in 0..c {
        let rows: Vec<usize> = (0..n).filter(|&i| y[i] != j).collect();
        if rows.is_empty() {
            continue;
        }
        let x0 = x.select_rows(&rows);
        let dist = distances_to_class(model, &x0, j, cfg)?;
        for (k, &i) in rows.iter().enumerate() {
            let col = if j < y[i] { j } else { j - 1 };
            out[i * (c - 1) + col] = dist[k].min(cfg.cap);
        }
    }
    for row in out.chunks_mut(c - 1) {
        row.sort_by(f64::total_cmp);
    }
    Tensor::new(vec![n, c - 1], out)
}

fn distances_to_class(model: &MlpClassifier, x0: &Tensor, j: usize, cfg: &DiConfig) -> Result<Vec<f64>> {
    let m = x0.rows();
    let d = x0.cols();
    let c = model.class_count();
    let mut dist = vec![cfg.cap; m];
    let mut cur: Vec<Vec<f64>> = (0..m).map(|i| x0.row(i).to_vec()).collect();
    let start_pred = model.predict(x0)?;
    let mut active: Vec<usize> = (0..m).filter(|&i| start_pred[i] != j).collect();
    for i in (0..m).filter(|&i| start_pred[i] == j) {
        dist[i] = 0.0;
    }
    for _ in 0..cfg.max_steps {
        if active.is_empty() {
            break;
        }
        let xa = Tensor::from_rows(&active.iter().map(|&i| cur[i].clone()).collect::<Vec<_>>())?;
        let logits = model.predict_logits(&xa)?;
        let mut mask = vec![0.0; active.len() * c];
        for a in 0..active.len() {
            let row = logits.row(a);
            let mut kstar = if j == 0 { 1 } else { 0 };
            for k in 0..c {
                if k != j && row[k] > row[kstar] {
                    kstar = k;
                }
            }
            mask[a * c + j] = 1.0;
            mask[a * c + kstar] = -1.0;
        }
        let mut g = Graph::new();
        let xv = g.leaf(xa.clone());
        let lv = model.logits_var(&mut g, xv)?;
        let mv = g.constant(Tensor::new(vec![active.len(), c], mask)?);
        let prod = g.mul(lv, mv)?;
        let total = g.sum(prod)?;
        let grad = g.backward(total)?.take(xv).expect("input is a leaf on the loss path");

        let mut next_rows = Vec::with_capacity(active.len());
        let mut next_active = Vec::with_capacity(active.len());
        for (a, &i) in active.iter().enumerate() {
            let gr = grad.row(a);
            let norm = gr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let nx: Vec<f64> = cur[i].iter().zip(gr).map(|(v, gv)| v + cfg.step * gv / norm).collect();
            next_rows.push(nx);
            next_active.push(i);
        }
        if next_active.is_empty() {
            break;
        }
        let pred = model.predict(&Tensor::from_rows(&next_rows)?)?;
        let mut crossed = Vec::new();
        let mut still = Vec::new();
        for (k, &i) in next_active.iter().enumerate() {
            if pred[k] == j {
                crossed.push((i, next_rows[k].clone()));
            } else {
                let moved = l2(&next_rows[k], x0.row(i));
                cur[i] = next_rows[k].clone();
                if moved < cfg.cap {
                    still.push(i);
                }
            }
        }
        if !crossed.is_empty() {
            let found = bisect(model, j, &cur, &crossed, cfg.bisection, d)?;
            for ((i, _), point) in crossed.iter().zip(found) {
                dist[*i] = l2(&point, x0.row(*i));
            }
        }
        active = still;
    }
    Ok(dist)
}

/// Shrink each segment `cur[i] -> end` to the first point predicted as `j`.
fn bisect(
    model: &MlpClassifier,
    j: usize,
    cur: &[Vec<f64>],
    crossed: &[(usize, Vec<f64>)],
    iterations: usize,
    d: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut lo = vec![0.0; crossed.len()];
    let mut hi = vec![1.0; crossed.len()];
    let point = |k: usize, t: f64| -> Vec<f64> {
        let (i, end) = &crossed[k];
        (0..d).map(|f| cur[*i][f] + t * (end[f] - cur[*i][f])).collect()
    };
    for _ in 0..iterations {
        let mids: Vec<Vec<f64>> = (0..crossed.len()).map(|k| point(k, 0.5 * (lo[k] + hi[k]))).collect();
        let pred = model.predict(&Tensor::from_rows(&mids)?)?;
        for k in 0..crossed.len() {
            let mid = 0.5 * (lo[k] + hi[k]);
            if pred[k] == j {
                hi[k] = mid;
            } else {
                lo[k] = mid;
            }
        }
    }
    Ok((0..crossed.len()).map(|k| point(k, hi[k])).collect())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Logistic regression on standardized margin embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRegressor {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Full-batch gradient steps used in training.
    pub iterations: usize,
}

impl MarginRegressor {
    /// Fit on embeddings with membership labels (true = member).
    pub fn fit(emb: &Tensor, member: &[bool], cfg: &DiConfig) -> Result<Self> {
        let n = emb.rows();
        let k = emb.cols();
        if n == 0 || member.len() != n {
            return Err(Error::invalid("regressor needs aligned, non-empty inputs"));
        }
        let mut mean = vec![0.0; k];
        let mut std = vec![0.0; k];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(emb.row(i)) {
                *m += v / n as f64;
            }
        }
        for i in 0..n {
            for ((s, v), m) in std.iter_mut().zip(emb.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in std.iter_mut() {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let z: Vec<Vec<f64>> = (0..n)
            .map(|i| emb.row(i).iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        let mut w = vec![0.0; k];
        let mut b = 0.0;
        for _ in 0..cfg.regressor_iterations {
            let mut gw = vec![0.0; k];
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(member) {
                let p = sigmoid(dot(&w, zi) + b);
                let r = p - if yi { 1.0 } else { 0.0 };
                for (g, v) in gw.iter_mut().zip(zi) {
                    *g += r * v / n as f64;
                }
                gb += r / n as f64;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= cfg.regressor_lr * (g + cfg.regressor_l2 * *wi);
            }
            b -= cfg.regressor_lr * gb;
        }
        Ok(Self {
            mean,
            std,
            weights: w,
            bias: b,
            iterations: cfg.regressor_iterations,
        })
    }

    /// Membership confidence in the open interval (0, 1).
    pub fn confidence(&self, row: &[f64]) -> f64 {
        let z: Vec<f64> = row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        sigmoid(dot(&self.weights, &z) + self.bias).clamp(1e-12, 1.0 - 1e-12)
    }

    fn encode(&self, w: AuxWriter) -> AuxWriter {
        w.f64s(&self.mean)
            .f64s(&self.std)
            .f64s(&self.weights)
            .f64(self.bias)
            .u64(self.iterations as u64)
    }

    fn decode(r: &mut AuxReader<'_>) -> Result<Self> {
        Ok(Self {
            mean: r.f64s()?,
            std: r.f64s()?,
            weights: r.f64s()?,
            bias: r.f64()?,
            iterations: r.u64()? as usize,
        })
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cohen's d of member over public confidences mapped to `[0, 1]` by
/// `d / (1 + d)`, zero when `d <= 0`. With zero pooled variance the effect is
/// 1 if the means differ and 0 otherwise.
pub fn effect_size(member: &[f64], public: &[f64]) -> Result<f64> {
    if member.len() < 2 || public.len() < 2 {
        return Err(Error::invalid("effect size needs at least 2 samples per group"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    let (m1, m2) = (mean(member), mean(public));
    let (n1, n2) = (member.len() as f64, public.len() as f64);
    let pooled = (((n1 - 1.0) * var(member, m1) + (n2 - 1.0) * var(public, m2)) / (n1 + n2 - 2.0)).sqrt();
    if pooled == 0.0 {
        return Ok(if m1 != m2 { 1.0 } else { 0.0 });
    }
    let d = (m1 - m2) / pooled;
    Ok(if d > 0.0 { d / (1.0 + d) } else { 0.0 })
}

pub fn encode_aux(members: usize, regressor: &MarginRegressor, cfg: &DiConfig) -> Vec<u8> {
    let w = AuxWriter::new()
        .u64(members as u64)
        .f64(cfg.step)
        .u64(cfg.max_steps as u64)
        .f64(cfg.cap)
        .u64(cfg.bisection as u64);
    regressor.encode(w).finish()
}

/// Member count, regressor and embedding settings.
pub fn decode_aux(aux: &[u8]) -> Result<(usize, MarginRegressor, DiConfig)> {
    let mut r = AuxReader::new(aux);
    let members = r.u64()? as usize;
    let step = r.f64()?;
    let max_steps = r.u64()? as usize;
    let cap = r.f64()?;
    let bisection = r.u64()? as usize;
    let reg = MarginRegressor::decode(&mut r)?;
    r.finish()?;
    if !(step > 0.0 && cap > 0.0) || max_steps > 10_000 || bisection > 64 {
        return Err(Error::Malformed("implausible embedding settings".into()));
    }
    let cfg = DiConfig {
        step,
        max_steps,
        cap,
        bisection,
        ..DiConfig::default()
    };
    Ok((members, reg, cfg))
}

/// Labelled samples given to the DI claim builder.
pub(crate) struct Samples<'a> {
    pub x: &'a Tensor,
    pub y: &'a [usize],
    pub truth: Vec<Truth>,
}

impl<'a> Samples<'a> {
    pub fn of(ds: &'a Dataset) -> Self {
        Self {
            x: ds.features(),
            y: ds.labels(),
            truth: ds.truth(),
        }
    }
}

/// Fit the regressor on embeddings of one member/public draw, then commit a
/// second, disjoint draw as the trigger set (members first) so the effect
/// is never measured on the regressor's own training samples.
pub(crate) fn build_claim(
    f_a: &MlpClassifier,
    fit: (Samples<'_>, Samples<'_>),
    eval: (Samples<'_>, Samples<'_>),
    cfg: &DiConfig,
    accuser_id: &str,
) -> Result<OwnershipClaim> {
    let stack = |m: &Samples<'_>, p: &Samples<'_>| -> Result<(Tensor, Vec<usize>, Vec<Truth>)> {
        let x = Tensor::concat_rows(&[m.x, p.x])?;
        let mut y = m.y.to_vec();
        y.extend_from_slice(p.y);
        let mut truth = m.truth.clone();
        truth.extend(p.truth.iter().copied());
        Ok((x, y, truth))
    };
    let (fx, fy, _) = stack(&fit.0, &fit.1)?;
    let emb = di_embed(f_a, &fx, &fy, cfg)?;
    let member: Vec<bool> = (0..fy.len()).map(|i| i < fit.0.x.rows()).collect();
    let reg = MarginRegressor::fit(&emb, &member, cfg)?;
    let (x, y, truth) = stack(&eval.0, &eval.1)?;
    let trigger = TriggerSet::new(x, y, truth)?;
    Ok(OwnershipClaim::commit(
        accuser_id,
        f_a.digest(),
        SchemeKind::Di,
        trigger,
        encode_aux(eval.0.x.rows(), &reg, cfg),
    ))
}

/// Honest claim: the regressor is fitted on `members` samples of the
/// source's training data against `public` samples of disjoint data, and
/// the trigger set is a fresh draw of the same sizes.
#[allow(clippy::too_many_arguments)]
pub fn di_claim(
    f_a: &MlpClassifier,
    train_ds: &Dataset,
    public_ds: &Dataset,
    members: usize,
    public: usize,
    seed: u64,
    cfg: &DiConfig,
    accuser_id: &str,
) -> Result<OwnershipClaim> {
    if members < 2 || public < 2 {
        return Err(Error::invalid("need at least 2 member and 2 public samples"));
    }
    if 2 * members > train_ds.len() || 2 * public > public_ds.len() {
        return Err(Error::invalid("not enough samples for disjoint fit and evaluation draws"));
    }
    let mut rng = rng_for(seed, 7);
    let mi = sample_indices(train_ds.len(), 2 * members, &mut rng);
    let pi = sample_indices(public_ds.len(), 2 * public, &mut rng);
    let (m_fit, m_eval) = (train_ds.subset(&mi[..members]), train_ds.subset(&mi[members..]));
    let (p_fit, p_eval) = (public_ds.subset(&pi[..public]), public_ds.subset(&pi[public..]));
    build_claim(
        f_a,
        (Samples::of(&m_fit), Samples::of(&p_fit)),
        (Samples::of(&m_eval), Samples::of(&p_eval)),
        cfg,
        accuser_id,
    )
}

/// Effect size of `model` on a DI claim: embed all trigger samples with the
/// model, score them with the claim's regressor and compare members to public.
pub fn di_effect(model: &MlpClassifier, claim: &OwnershipClaim) -> Result<f64> {
    let (members, reg, cfg) = decode_aux(&claim.aux)?;
    let t = &claim.trigger;
    if members > t.len() {
        return Err(Error::Malformed("member count exceeds trigger set".into()));
    }
    let emb = di_embed(model, &t.x, &t.y, &cfg)?;
    if reg.mean.len() != emb.cols() {
        return Err(Error::Malformed("regressor width does not match the model".into()));
    }
    let conf: Vec<f64> = (0..t.len()).map(|i| reg.confidence(emb.row(i))).collect();
    effect_size(&conf[..members], &conf[members..])
}

/// Mean true-class margin `logit_y - max_{k != y} logit_k` over a batch.
pub fn mean_margin(model: &MlpClassifier, x: &Tensor, y: &[usize]) -> Result<f64> {
    let logits = model.predict_logits(x)?;
    if y.is_empty() {
        return Err(Error::invalid("mean margin of an empty set"));
    }
    let mut total = 0.0;
    for (i, &l) in y.iter().enumerate() {
        let row = logits.row(i);
        let other = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != l)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        total += row[l] - other;
    }
    Ok(total / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups_have_zero_effect() {
        let v = [0.2, 0.4, 0.6, 0.9];
        assert_eq!(effect_size(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn zero_variance_cases() {
        assert_eq!(effect_size(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(effect_size(&[0.7, 0.7], &[0.5, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn effect_is_normalized_cohens_d() {
        // means 1 and 0, pooled sd 1 -> d = 1 -> 0.5
        let a = [0.0, 2.0];
        let b = [-1.0, 1.0];
        let sd = (2.0f64).sqrt();
        let e = effect_size(&a, &b).unwrap();
        let d = 1.0 / sd;
        assert!((e - d / (1.0 + d)).abs() < 1e-12);
        assert_eq!(effect_size(&b, &a).unwrap(), 0.0);
    }
}
