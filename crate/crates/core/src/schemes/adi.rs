//! Out-of-distribution trigger watermarking with random labels.

use rand::Rng;

use crate::attack::rng_for;
use crate::data::{sample_ood, Dataset, Truth};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::protocol::claim::{OwnershipClaim, SchemeKind, TriggerSet};
use crate::schemes::{embed_watermark, WatermarkConfig};

/// Sample `size` out-of-distribution points, label them uniformly at random
/// and fine-tune `f_a` until it reproduces the labels. Returns the committed
/// claim and the watermarked model.
pub fn adi_claim(
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
    let x = sample_ood(ds, size, seed)?;
    let mut rng = rng_for(seed, 1);
    let y: Vec<usize> = (0..size).map(|_| rng.random_range(0..ds.class_count())).collect();
    let trigger = TriggerSet::new(x, y, vec![Truth::NoClass; size])?;
    let model = embed_watermark(f_a, ds.features(), ds.labels(), &trigger, wm)?;
    let claim = OwnershipClaim::commit(accuser_id, model.digest(), SchemeKind::Adi, trigger, Vec::new());
    Ok((claim, model))
}
