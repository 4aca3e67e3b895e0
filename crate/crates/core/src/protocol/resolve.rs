//! The judge's four-check resolution of a claim against a suspect model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Hash, MlpClassifier};
use crate::protocol::claim::{OwnershipClaim, SchemeKind};
use crate::protocol::ledger::Ledger;
use crate::protocol::thresholds::{DecisionThresholds, ThresholdKind};
use crate::schemes;

/// The suspect as presented to the judge: its model and, optionally, the
/// commitment it posted for that model.
#[derive(Debug, Clone, Copy)]
pub struct Suspect<'a> {
    pub model: &'a MlpClassifier,
    pub commitment: Option<Hash>,
}

impl<'a> Suspect<'a> {
    pub fn new(model: &'a MlpClassifier) -> Self {
        Self {
            model,
            commitment: None,
        }
    }
}

/// The four checks, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    SourceScore,
    SuspectScore,
    Commitment,
    Timestamp,
}

/// Pass/fail of every check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResults {
    pub source_score: bool,
    pub suspect_score: bool,
    pub commitment: bool,
    pub timestamp: bool,
}

impl CheckResults {
    pub fn all_pass(&self) -> bool {
        self.source_score && self.suspect_score && self.commitment && self.timestamp
    }

    /// The first failing check, if any.
    pub fn first_failure(&self) -> Option<Check> {
        [
            (self.source_score, Check::SourceScore),
            (self.suspect_score, Check::SuspectScore),
            (self.commitment, Check::Commitment),
            (self.timestamp, Check::Timestamp),
        ]
        .into_iter()
        .find(|(ok, _)| !ok)
        .map(|(_, c)| c)
    }
}

/// Outcome of a resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub checks: CheckResults,
    /// Score of the source model (MOR accuracy, HMAC agreement for DAWN,
    /// effect size for DI).
    pub morr_acc_source: f64,
    /// Score of the suspect model.
    pub morr_acc_suspect: f64,
    pub threshold_used: f64,
}

/// Evaluate the four checks:
/// 1. the source model matches the committed digest and scores above the
///    threshold (DAWN: every label recomputes from the key);
/// 2. the suspect scores above the threshold;
/// 3. the commitment recomputes from the claim fields;
/// 4. the claim's commitment is on the ledger and precedes the suspect's,
///    when the suspect has a posted commitment.
pub fn resolve(
    claim: &OwnershipClaim,
    suspect: &Suspect<'_>,
    thresholds: &DecisionThresholds,
    kind: ThresholdKind,
    ledger: &Ledger,
    source: &MlpClassifier,
) -> Result<Verdict> {
    if thresholds.scheme != claim.scheme {
        return Err(Error::invalid(format!(
            "thresholds are for {} but the claim is {}",
            thresholds.scheme, claim.scheme
        )));
    }
    let t = thresholds.get(kind);

    let source_digest_ok = source.digest() == claim.model_digest;
    let (source_score, source_pass) = if claim.scheme == SchemeKind::Dawn {
        let agreement = schemes::dawn::label_agreement(claim).unwrap_or(0.0);
        (agreement, agreement == 1.0)
    } else {
        let s = schemes::score(source, claim).unwrap_or(0.0);
        (s, thresholds.exceeds(s, kind))
    };

    let suspect_score = schemes::score(suspect.model, claim).unwrap_or(0.0);
    let suspect_pass = thresholds.exceeds(suspect_score, kind);

    let commitment = claim.commitment_is_valid();

    let timestamp = match ledger.lookup(&claim.commitment) {
        None => false,
        Some(ts_a) => match suspect.commitment.and_then(|cm| ledger.lookup(&cm)) {
            None => true,
            Some(ts_s) => ts_a < ts_s,
        },
    };

    let checks = CheckResults {
        source_score: source_digest_ok && source_pass,
        suspect_score: suspect_pass,
        commitment,
        timestamp,
    };
    Ok(Verdict {
        accepted: checks.all_pass(),
        checks,
        morr_acc_source: source_score,
        morr_acc_suspect: suspect_score,
        threshold_used: t,
    })
}
