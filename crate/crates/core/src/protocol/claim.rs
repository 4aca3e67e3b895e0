//! Ownership claims, their canonical serialization and commitments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Truth;
use crate::error::{Error, Result};
use crate::models::{Hash, Reader};
use crate::tensor::Tensor;

const CLAIM_MAGIC: &[u8; 4] = b"MOC1";
const CLAIM_VERSION: u32 = 1;
const NO_CLASS: u64 = u64::MAX;

/// The six supported ownership schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Adi,
    Ewe,
    Lib,
    Dawn,
    Lukas,
    Di,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::Adi,
        SchemeKind::Ewe,
        SchemeKind::Lib,
        SchemeKind::Dawn,
        SchemeKind::Lukas,
        SchemeKind::Di,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Adi => "adi",
            SchemeKind::Ewe => "ewe",
            SchemeKind::Lib => "lib",
            SchemeKind::Dawn => "dawn",
            SchemeKind::Lukas => "lukas",
            SchemeKind::Di => "di",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::Malformed(format!("unknown scheme tag {tag}")))
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?} (expected adi, ewe, lib, dawn, lukas or di)")))
    }
}

/// Paired trigger samples and claimed labels, with the ground truth of every
/// sample carried alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSet {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub truth: Vec<Truth>,
}

impl TriggerSet {
    pub fn new(x: Tensor, y: Vec<usize>, truth: Vec<Truth>) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() || y.len() != truth.len() {
            return Err(Error::ShapeMismatch {
                op: "TriggerSet::new",
                left: x.shape().to_vec(),
                right: vec![y.len(), truth.len()],
            });
        }
        Ok(Self { x, y, truth })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A committed ownership claim.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnershipClaim {
    pub accuser_id: String,
    pub model_digest: Hash,
    pub scheme: SchemeKind,
    pub trigger: TriggerSet,
    /// Scheme-specific auxiliary data.
    pub aux: Vec<u8>,
    pub commitment: Hash,
}

impl OwnershipClaim {
    /// Build a claim and compute its commitment.
    pub fn commit(
        accuser_id: impl Into<String>,
        model_digest: Hash,
        scheme: SchemeKind,
        trigger: TriggerSet,
        aux: Vec<u8>,
    ) -> Self {
        let mut claim = Self {
            accuser_id: accuser_id.into(),
            model_digest,
            scheme,
            trigger,
            aux,
            commitment: [0; 32],
        };
        claim.commitment = claim.recompute_commitment();
        claim
    }

    /// Length-prefixed canonical serialization of every committed field.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let id = self.accuser_id.as_bytes();
        out.extend_from_slice(&(id.len() as u64).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.model_digest);
        out.push(self.scheme.tag());
        let x = &self.trigger.x;
        out.extend_from_slice(&(x.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(x.cols() as u64).to_le_bytes());
        for v in x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.trigger.y.len() as u64).to_le_bytes());
        for &y in &self.trigger.y {
            out.extend_from_slice(&(y as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.trigger.truth.len() as u64).to_le_bytes());
        for t in &self.trigger.truth {
            let v = match t {
                Truth::Class(c) => *c as u64,
                Truth::NoClass => NO_CLASS,
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.aux.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.aux);
        out
    }

    /// SHA-256 over [`OwnershipClaim::canonical_bytes`].
    pub fn recompute_commitment(&self) -> Hash {
        Sha256::digest(self.canonical_bytes()).into()
    }

    pub fn commitment_is_valid(&self) -> bool {
        self.recompute_commitment() == self.commitment
    }

    /// Versioned container: magic, version, canonical body, stored commitment.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CLAIM_MAGIC);
        out.extend_from_slice(&CLAIM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.canonical_bytes());
        out.extend_from_slice(&self.commitment);
        out
    }

    /// Parse a container. The stored commitment is returned as is; it is the
    /// judge's job to check it.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CLAIM_MAGIC {
            return Err(Error::Malformed("not a claim container".into()));
        }
        let version = r.u32()?;
        if version != CLAIM_VERSION {
            return Err(Error::Malformed(format!("unsupported claim version {version}")));
        }
        let id_len = bounded_len(&mut r, bytes.len())?;
        let accuser_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::Malformed("accuser id is not UTF-8".into()))?;
        let model_digest: Hash = r.take(32)?.try_into().expect("32 bytes");
        let mut tag = [0u8; 1];
        tag.copy_from_slice(r.take(1)?);
        let scheme = SchemeKind::from_tag(tag[0])?;
        let rows = bounded_len(&mut r, bytes.len())?;
        let cols = bounded_len(&mut r, bytes.len())?;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| Error::Malformed("trigger matrix too large".into()))?;
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let x = Tensor::new(vec![rows, cols], data)
            .map_err(|e| Error::Malformed(format!("trigger samples: {e}")))?;
        let ny = bounded_len(&mut r, bytes.len())?;
        let y = (0..ny)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let nt = bounded_len(&mut r, bytes.len())?;
        let truth = (0..nt)
            .map(|_| {
                r.u64().map(|v| {
                    if v == NO_CLASS {
                        Truth::NoClass
                    } else {
                        Truth::Class(v as usize)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let aux_len = bounded_len(&mut r, bytes.len())?;
        let aux = r.take(aux_len)?.to_vec();
        let commitment: Hash = r.take(32)?.try_into().expect("32 bytes");
        if !r.is_done() {
            return Err(Error::Malformed("trailing bytes after commitment".into()));
        }
        let trigger =
            TriggerSet::new(x, y, truth).map_err(|e| Error::Malformed(format!("trigger set: {e}")))?;
        Ok(Self {
            accuser_id,
            model_digest,
            scheme,
            trigger,
            aux,
            commitment,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn bounded_len(r: &mut Reader<'_>, total: usize) -> Result<usize> {
    let v = r.u64()?;
    if v > total as u64 {
        return Err(Error::Malformed(format!("length {v} exceeds container size")));
    }
    Ok(v as usize)
}

/// Little-endian writer for scheme auxiliary data.
#[derive(Debug, Default)]
pub struct AuxWriter(Vec<u8>);

impl AuxWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(mut self, v: f64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(mut self, v: &[f64]) -> Self {
        self = self.u64(v.len() as u64);
        for &x in v {
            self = self.f64(x);
        }
        self
    }

    pub fn bytes(mut self, v: &[u8]) -> Self {
        self = self.u64(v.len() as u64);
        self.0.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

/// Reader matching [`AuxWriter`].
pub struct AuxReader<'a> {
    inner: Reader<'a>,
    total: usize,
}

impl<'a> AuxReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            inner: Reader::new(bytes),
            total: bytes.len(),
        }
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.inner.u64()
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.inner.f64()
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = bounded_len(&mut self.inner, self.total)?;
        (0..n).map(|_| self.inner.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = bounded_len(&mut self.inner, self.total)?;
        Ok(self.inner.take(n)?.to_vec())
    }

    pub fn finish(self) -> Result<()> {
        if self.inner.is_done() {
            Ok(())
        } else {
            Err(Error::Malformed("trailing auxiliary bytes".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_claim() -> OwnershipClaim {
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let trigger = TriggerSet::new(x, vec![1, 2], vec![Truth::NoClass, Truth::Class(0)]).unwrap();
        OwnershipClaim::commit("alice", [7; 32], SchemeKind::Adi, trigger, vec![1, 2, 3])
    }

    #[test]
    fn commit_is_deterministic() {
        assert_eq!(sample_claim().commitment, sample_claim().commitment);
    }

    #[test]
    fn container_round_trip() {
        let c = sample_claim();
        let back = OwnershipClaim::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(c, back);
        assert!(back.commitment_is_valid());
    }

    #[test]
    fn flipping_trigger_byte_changes_hash() {
        let c = sample_claim();
        let mut bytes = c.to_bytes();
        // first byte of the first trigger feature
        let offset = 4 + 4 + 8 + 5 + 32 + 1 + 16;
        bytes[offset] ^= 1;
        let tampered = OwnershipClaim::from_bytes(&bytes).unwrap();
        assert_ne!(tampered.recompute_commitment(), c.commitment);
        assert!(!tampered.commitment_is_valid());
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in SchemeKind::ALL {
            assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
            assert_eq!(SchemeKind::from_tag(k.tag()).unwrap(), k);
        }
        assert!("zhang".parse::<SchemeKind>().is_err());
    }
}
