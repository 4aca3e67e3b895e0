//! Bounded-perturbation watermarking: in-distribution samples moved by a
//! secret sign pattern within an L-infinity ball and given wrong labels.

use rand::Rng;

use crate::attack::rng_for;
use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::protocol::claim::{AuxReader, AuxWriter, OwnershipClaim, SchemeKind, TriggerSet};
use crate::schemes::{embed_watermark, sample_indices, WatermarkConfig};
use crate::tensor::{clip_to_ball, Bounds, Tensor};

/// Default perturbation bound: 16 levels of an 8-bit channel.
pub const DEFAULT_EPSILON: f64 = 16.0 / 255.0;

pub fn encode_aux(epsilon: f64, pattern: &[f64]) -> Vec<u8> {
    AuxWriter::new().f64(epsilon).f64s(pattern).finish()
}

pub fn decode_aux(aux: &[u8]) -> Result<(f64, Vec<f64>)> {
    let mut r = AuxReader::new(aux);
    let eps = r.f64()?;
    let pattern = r.f64s()?;
    r.finish()?;
    Ok((eps, pattern))
}

/// Pick `size` samples, move each by `epsilon` times a secret sign pattern
/// (clipped to the ball and box) and fine-tune `f_a` to label each one with
/// its class shifted by a secret offset. The chosen samples are left out of
/// the base batches.
pub fn lib_claim(
    f_a: &MlpClassifier,
    ds: &Dataset,
    size: usize,
    seed: u64,
    epsilon: f64,
    wm: &WatermarkConfig,
    accuser_id: &str,
) -> Result<(OwnershipClaim, MlpClassifier)> {
    if size == 0 {
        return Err(Error::invalid("trigger size must be >= 1"));
    }
    if ds.class_count() < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if size >= ds.len() {
        return Err(Error::invalid("trigger size must be smaller than the dataset"));
    }
    let mut rng = rng_for(seed, 4);
    let picked = sample_indices(ds.len(), size, &mut rng);
    let pattern: Vec<f64> = (0..ds.dim())
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let x = ds.features().select_rows(&picked);
    let d = ds.dim();
    let moved: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + epsilon * pattern[i % d])
        .collect();
    let x_hat = clip_to_ball(&Tensor::new(x.shape().to_vec(), moved)?, &x, epsilon, &Bounds::unit())?;
    let truth: Vec<usize> = picked.iter().map(|&i| ds.labels()[i]).collect();
    let c = ds.class_count();
    let offset = rng.random_range(1..c);
    let y: Vec<usize> = truth.iter().map(|&t| (t + offset) % c).collect();
    let trigger = TriggerSet::new(x_hat, y, truth.into_iter().map(Truth::Class).collect())?;

    let mut keep = vec![true; ds.len()];
    for &i in &picked {
        keep[i] = false;
    }
    let rest: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    let base = ds.subset(&rest);
    let model = embed_watermark(f_a, base.features(), base.labels(), &trigger, wm)?;
    let claim = OwnershipClaim::commit(
        accuser_id,
        model.digest(),
        SchemeKind::Lib,
        trigger,
        encode_aux(epsilon, &pattern),
    );
    Ok((claim, model))
}
