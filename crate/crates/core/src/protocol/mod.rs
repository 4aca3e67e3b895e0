//! The generalized ownership-resolution protocol: claims, commitments, the
//! ledger, verification, thresholds and resolution.

pub mod claim;
pub mod ledger;
pub mod resolve;
pub mod thresholds;
pub mod verify;

pub use claim::{OwnershipClaim, SchemeKind, TriggerSet};
pub use ledger::{Ledger, LedgerEntry};
pub use resolve::{resolve, Check, CheckResults, Suspect, Verdict};
pub use thresholds::{DecisionThresholds, Direction, ThresholdKind};
pub use verify::{mor_accuracy, mor_accuracy_of, verify_pair};

/// Post a claim's commitment on the ledger.
pub fn publish(ledger: &mut Ledger, claim: &OwnershipClaim) -> crate::Result<LedgerEntry> {
    ledger.timestamp(claim.commitment)
}
