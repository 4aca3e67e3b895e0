//! Active watermarking at the prediction API: a keyed hash of each query
//! decides whether the answer is altered, and to which label.

use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use sha2::Sha256;

use crate::attack::rng_for;
use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::models::{Hash, MlpClassifier};
use crate::protocol::claim::{AuxReader, AuxWriter, OwnershipClaim, SchemeKind, TriggerSet};
use crate::tensor::Tensor;

/// Default fraction of queries that receive an altered answer.
pub const DEFAULT_RATE: f64 = 0.02;
/// Quantization levels per feature.
pub const LEVELS: f64 = 16.0;

/// The model owner's secret key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DawnKey(pub [u8; 32]);

impl DawnKey {
    /// Key drawn from a seeded ChaCha stream.
    pub fn generate(seed: u64) -> Self {
        let mut k = [0u8; 32];
        rng_for(seed, 5).fill_bytes(&mut k);
        Self(k)
    }
}

/// Quantize every feature to 4 bits and pack two features per byte.
pub fn dawn_mu(x: &[f64]) -> Vec<u8> {
    let q: Vec<u8> = x
        .iter()
        .map(|&v| (v * LEVELS).floor().clamp(0.0, LEVELS - 1.0) as u8)
        .collect();
    q.chunks(2)
        .map(|p| (p[0] << 4) | p.get(1).copied().unwrap_or(0))
        .collect()
}

/// HMAC-SHA256 of `message` under `key`.
pub fn hmac_digest(key: &DawnKey, message: &[u8]) -> Hash {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(&key.0).expect("HMAC accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

/// Whether a query with this digest is watermarked at `rate`.
pub fn is_selected(digest: &Hash, rate: f64) -> bool {
    (digest[0] as f64) < rate * 256.0
}

/// Keyed shift permutation: `(y + 1 + (digest mod (C - 1))) mod C`, never `y`.
pub fn dawn_pi(digest: &Hash, y: usize, classes: usize) -> Result<usize> {
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    let m = (classes - 1) as u128;
    let r = digest.iter().fold(0u128, |acc, &b| (acc * 256 + b as u128) % m);
    Ok((y + 1 + r as usize) % classes)
}

/// A prediction API that alters the answers to selected queries.
#[derive(Debug, Clone)]
pub struct DawnApi<'a> {
    pub model: &'a MlpClassifier,
    pub key: DawnKey,
    pub rate: f64,
}

/// The API's answers to a batch.
#[derive(Debug, Clone)]
pub struct DawnAnswers {
    /// Labels returned to the client.
    pub returned: Vec<usize>,
    /// The model's own predictions.
    pub original: Vec<usize>,
    pub selected: Vec<bool>,
}

impl<'a> DawnApi<'a> {
    pub fn new(model: &'a MlpClassifier, key: DawnKey, rate: f64) -> Self {
        Self { model, key, rate }
    }

    pub fn answer(&self, x: &Tensor) -> Result<DawnAnswers> {
        let original = self.model.predict(x)?;
        let c = self.model.class_count();
        let mut returned = Vec::with_capacity(original.len());
        let mut selected = Vec::with_capacity(original.len());
        for (i, &y) in original.iter().enumerate() {
            let digest = hmac_digest(&self.key, &dawn_mu(x.row(i)));
            let sel = is_selected(&digest, self.rate);
            selected.push(sel);
            returned.push(if sel { dawn_pi(&digest, y, c)? } else { y });
        }
        Ok(DawnAnswers {
            returned,
            original,
            selected,
        })
    }
}

pub fn encode_aux(key: &DawnKey, rate: f64, classes: usize, original: &[usize]) -> Vec<u8> {
    let mut w = AuxWriter::new()
        .bytes(&key.0)
        .f64(rate)
        .u64(classes as u64)
        .u64(original.len() as u64);
    for &y in original {
        w = w.u64(y as u64);
    }
    w.finish()
}

/// Key, rate, class count and the model's original answers.
pub fn decode_aux(aux: &[u8]) -> Result<(DawnKey, f64, usize, Vec<usize>)> {
    let mut r = AuxReader::new(aux);
    let key: [u8; 32] = r
        .bytes()?
        .try_into()
        .map_err(|_| Error::Malformed("DAWN key must be 32 bytes".into()))?;
    let rate = r.f64()?;
    let classes = r.u64()? as usize;
    let n = r.u64()?;
    if n > aux.len() as u64 {
        return Err(Error::Malformed("label count exceeds auxiliary data".into()));
    }
    let original = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((DawnKey(key), rate, classes, original))
}

/// Build a claim from the queries a client sent: every selected query with
/// the altered label it received. The key and original answers go in aux.
pub fn dawn_record(
    f_a: &MlpClassifier,
    key: DawnKey,
    rate: f64,
    client_queries: &Dataset,
    accuser_id: &str,
) -> Result<OwnershipClaim> {
    if f_a.class_count() < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    let answers = DawnApi::new(f_a, key, rate).answer(client_queries.features())?;
    let idx: Vec<usize> = (0..answers.selected.len()).filter(|&i| answers.selected[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyTriggerSet);
    }
    let x = client_queries.features().select_rows(&idx);
    let y: Vec<usize> = idx.iter().map(|&i| answers.returned[i]).collect();
    let original: Vec<usize> = idx.iter().map(|&i| answers.original[i]).collect();
    let truth: Vec<Truth> = idx.iter().map(|&i| Truth::Class(client_queries.labels()[i])).collect();
    let trigger = TriggerSet::new(x, y, truth)?;
    Ok(OwnershipClaim::commit(
        accuser_id,
        f_a.digest(),
        SchemeKind::Dawn,
        trigger,
        encode_aux(&key, rate, f_a.class_count(), &original),
    ))
}

/// Fraction of trigger pairs whose label recomputes from the key: the query
/// is selected and its label equals the keyed permutation of the original.
pub fn label_agreement(claim: &OwnershipClaim) -> Result<f64> {
    let (key, rate, c, original) = decode_aux(&claim.aux)?;
    let t = &claim.trigger;
    if t.is_empty() {
        return Err(Error::EmptyTriggerSet);
    }
    if original.len() != t.len() {
        return Err(Error::Malformed("original label count does not match trigger set".into()));
    }
    let mut ok = 0;
    for i in 0..t.len() {
        let digest = hmac_digest(&key, &dawn_mu(t.x.row(i)));
        if is_selected(&digest, rate) && dawn_pi(&digest, original[i], c)? == t.y[i] {
            ok += 1;
        }
    }
    Ok(ok as f64 / t.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_never_returns_input() {
        for b in 0..=255u8 {
            let digest = [b; 32];
            for y in 0..10 {
                assert_ne!(dawn_pi(&digest, y, 10).unwrap(), y);
            }
        }
        assert!(dawn_pi(&[0; 32], 0, 1).is_err());
    }

    #[test]
    fn mu_packs_nibbles() {
        assert_eq!(dawn_mu(&[0.0, 1.0, 0.5]), vec![0x0f, 0x80]);
    }

    #[test]
    fn selection_rate_near_target() {
        let key = DawnKey::generate(3);
        let n = 10_000;
        let mut hits = 0;
        for i in 0..n {
            let msg = (i as u64).to_le_bytes();
            if is_selected(&hmac_digest(&key, &msg), DEFAULT_RATE) {
                hits += 1;
            }
        }
        let rate = hits as f64 / n as f64;
        assert!((rate - DEFAULT_RATE).abs() <= 0.5 * DEFAULT_RATE, "rate {rate}");
    }

    #[test]
    fn hmac_matches_rfc4231_case_2() {
        let mut key = [0u8; 32];
        key[..4].copy_from_slice(b"Jefe");
        // RFC 4231 pads short keys with zeros, so a zero-padded 32-byte key is equivalent.
        let d = hmac_digest(&DawnKey(key), b"what do ya want for nothing?");
        assert_eq!(
            hex::encode(d),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }
}
