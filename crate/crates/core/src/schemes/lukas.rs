//! Conferrable adversarial-example fingerprints: targeted examples that the
//! source and its extracted copies share but independent models do not.

use serde::{Deserialize, Serialize};

use crate::attack::{ifgsm, rng_for, AttackConfig, Objective, StepDirection};
use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::protocol::claim::{AuxReader, AuxWriter, OwnershipClaim, SchemeKind, TriggerSet};
use crate::schemes::{sample_indices, wrong_label};
use crate::tensor::Tensor;

/// Fingerprint generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LukasConfig {
    /// Weight of the independent-model term that is maximized.
    pub lambda: f64,
    pub attack: AttackConfig,
    /// Candidate batches tried before giving up on filling the set.
    pub max_rounds: usize,
}

impl Default for LukasConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            attack: AttackConfig::default(),
            max_rounds: 10,
        }
    }
}

pub fn encode_aux(epsilon: f64) -> Vec<u8> {
    AuxWriter::new().f64(epsilon).finish()
}

pub fn decode_aux(aux: &[u8]) -> Result<f64> {
    let mut r = AuxReader::new(aux);
    let eps = r.f64()?;
    r.finish()?;
    Ok(eps)
}

/// Generate a fingerprint of `size` samples. Each candidate starts from a
/// sample with a wrong target label and is optimized so the source and the
/// extracted models predict the target while the independents do not.
/// Candidates the source does not map to the target, or that at least half
/// of the independents follow, are discarded.
#[allow(clippy::too_many_arguments)]
pub fn lukas_claim(
    f_a: &MlpClassifier,
    ds: &Dataset,
    size: usize,
    seed: u64,
    extracted: &[&MlpClassifier],
    independent: &[&MlpClassifier],
    cfg: &LukasConfig,
    accuser_id: &str,
) -> Result<OwnershipClaim> {
    if extracted.len() < 2 || independent.len() < 2 {
        return Err(Error::invalid(format!(
            "fingerprinting needs at least 2 extracted and 2 independent models, got {} and {}",
            extracted.len(),
            independent.len()
        )));
    }
    if size == 0 {
        return Err(Error::invalid("trigger size must be >= 1"));
    }
    let mut terms = vec![(f_a, 1.0)];
    terms.extend(extracted.iter().map(|&m| (m, 1.0)));
    terms.extend(independent.iter().map(|&m| (m, -cfg.lambda)));
    let objective = Objective::new(terms)?;

    let mut rng = rng_for(seed, 6);
    let c = ds.class_count();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..cfg.max_rounds {
        if ys.len() >= size {
            break;
        }
        let idx = sample_indices(ds.len(), size, &mut rng);
        let x = ds.features().select_rows(&idx);
        let orig: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
        let target: Vec<usize> = orig.iter().map(|&y| wrong_label(y, c, &mut rng)).collect();
        let out = ifgsm(&x, &target, &objective, &cfg.attack, StepDirection::Minimize, None)?;
        let pa = f_a.predict(&out.x_hat)?;
        let pind: Vec<Vec<usize>> = independent
            .iter()
            .map(|m| m.predict(&out.x_hat))
            .collect::<Result<_>>()?;
        for i in 0..idx.len() {
            if ys.len() >= size {
                break;
            }
            let followers = pind.iter().filter(|p| p[i] == target[i]).count();
            if pa[i] == target[i] && 2 * followers < independent.len() {
                xs.push(out.x_hat.row(i).to_vec());
                ys.push(target[i]);
                truth.push(Truth::Class(orig[i]));
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::ClaimGeneration("no conferrable candidate found".into()));
    }
    if ys.len() < size {
        log::warn!("fingerprint has {} of {size} requested samples", ys.len());
    }
    let trigger = TriggerSet::new(Tensor::from_rows(&xs)?, ys, truth)?;
    Ok(OwnershipClaim::commit(
        accuser_id,
        f_a.digest(),
        SchemeKind::Lukas,
        trigger,
        encode_aux(cfg.attack.epsilon),
    ))
}
