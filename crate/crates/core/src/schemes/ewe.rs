//! Additive trigger-mask watermarking: samples of one class plus a fixed mask
//! are relabelled to a single target class.

use rand::Rng;

use crate::attack::rng_for;
use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::protocol::claim::{AuxReader, AuxWriter, OwnershipClaim, SchemeKind, TriggerSet};
use crate::schemes::{embed_watermark, sample_indices, wrong_label, WatermarkConfig};
use crate::tensor::Tensor;

/// Default mask magnitude.
pub const MASK_MAGNITUDE: f64 = 0.1;

/// An additive trigger pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerMask {
    pub mask: Vec<f64>,
}

impl TriggerMask {
    /// `magnitude` on a random half of the coordinates, zero elsewhere.
    pub fn random(dim: usize, magnitude: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, 2);
        let mut mask = vec![0.0; dim];
        for j in sample_indices(dim, dim.div_ceil(2), &mut rng) {
            mask[j] = magnitude;
        }
        Self { mask }
    }

    /// Add the mask to every row and clamp to the unit box.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mask.len();
        if x.cols() != d {
            return Err(crate::Error::ShapeMismatch {
                op: "TriggerMask::apply",
                left: x.shape().to_vec(),
                right: vec![d],
            });
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v + self.mask[i % d]).clamp(0.0, 1.0))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Auxiliary data: the mask, the source class and the target class.
pub fn encode_aux(mask: &[f64], source: usize, target: usize) -> Vec<u8> {
    AuxWriter::new()
        .f64s(mask)
        .u64(source as u64)
        .u64(target as u64)
        .finish()
}

pub fn decode_aux(aux: &[u8]) -> Result<(Vec<f64>, usize, usize)> {
    let mut r = AuxReader::new(aux);
    let mask = r.f64s()?;
    let source = r.u64()? as usize;
    let target = r.u64()? as usize;
    r.finish()?;
    Ok((mask, source, target))
}

/// Take `size` samples (at most the whole class) of one random class, add a mask and fine-tune `f_a`
/// to map them to one random other class.
pub fn ewe_claim(
    f_a: &MlpClassifier,
    ds: &Dataset,
    size: usize,
    seed: u64,
    wm: &WatermarkConfig,
    accuser_id: &str,
) -> Result<(OwnershipClaim, MlpClassifier)> {
    if size == 0 {
        return Err(Error::invalid("trigger size must be >= 1"));
    }
    let mut rng = rng_for(seed, 3);
    let c = ds.class_count();
    let source = rng.random_range(0..c);
    let target = wrong_label(source, c, &mut rng);
    let pool = ds.indices_of(source);
    if pool.is_empty() {
        return Err(Error::invalid(format!("class {source} has no samples")));
    }
    if pool.len() < size {
        log::warn!("class {source} has {} samples, {size} requested; using all", pool.len());
    }
    let size = size.min(pool.len());
    let picked: Vec<usize> = sample_indices(pool.len(), size, &mut rng)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    let mask = TriggerMask::random(ds.dim(), MASK_MAGNITUDE, seed);
    let x = mask.apply(&ds.features().select_rows(&picked))?;
    let trigger = TriggerSet::new(x, vec![target; size], vec![Truth::Class(source); size])?;
    let model = embed_watermark(f_a, ds.features(), ds.labels(), &trigger, wm)?;
    let aux = encode_aux(&mask.mask, source, target);
    let claim = OwnershipClaim::commit(accuser_id, model.digest(), SchemeKind::Ewe, trigger, aux);
    Ok((claim, model))
}
