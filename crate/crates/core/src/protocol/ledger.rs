//! Append-only timestamp ledger standing in for a public bulletin board.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Hash;

/// One posted commitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub cm: Hash,
    pub ts: u64,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    cm: String,
    ts: u64,
}

/// Commitments with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Append `cm` with the next timestamp. Posting the same commitment twice
    /// is rejected.
    pub fn timestamp(&mut self, cm: Hash) -> Result<LedgerEntry> {
        if self.lookup(&cm).is_some() {
            return Err(Error::DuplicateCommitment(hex::encode(cm)));
        }
        let ts = self.entries.last().map(|e| e.ts + 1).unwrap_or(1);
        let entry = LedgerEntry { cm, ts };
        self.entries.push(entry);
        Ok(entry)
    }

    /// Timestamp of `cm`, if posted.
    pub fn lookup(&self, cm: &Hash) -> Option<u64> {
        self.entries.iter().find(|e| &e.cm == cm).map(|e| e.ts)
    }

    /// Write as JSON lines `{"cm": hex, "ts": n}`.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(&EntryLine {
                cm: hex::encode(e.cm),
                ts: e.ts,
            })?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Read a JSON-lines ledger, checking the append-only invariants.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ledger = Ledger::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let entry: EntryLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let cm: Hash = hex::decode(&entry.cm)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| parse("cm must be 64 hex characters".into()))?;
            if ledger.entries.last().is_some_and(|last| entry.ts <= last.ts) {
                return Err(parse(format!("timestamp {} does not increase", entry.ts)));
            }
            if ledger.lookup(&cm).is_some() {
                return Err(parse(format!("duplicate commitment {}", entry.cm)));
            }
            ledger.entries.push(LedgerEntry { cm, ts: entry.ts });
        }
        Ok(ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_increase() {
        let mut l = Ledger::new();
        let a = l.timestamp([1; 32]).unwrap();
        let b = l.timestamp([2; 32]).unwrap();
        assert!(b.ts > a.ts);
    }

    #[test]
    fn duplicate_rejected() {
        let mut l = Ledger::new();
        l.timestamp([1; 32]).unwrap();
        assert!(matches!(l.timestamp([1; 32]), Err(Error::DuplicateCommitment(_))));
        assert_eq!(l.entries().len(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledger.jsonl");
        let mut l = Ledger::new();
        l.timestamp([1; 32]).unwrap();
        l.timestamp([9; 32]).unwrap();
        l.save_jsonl(&p).unwrap();
        assert_eq!(Ledger::load_jsonl(&p).unwrap(), l);
    }

    #[test]
    fn non_increasing_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledger.jsonl");
        let a = hex::encode([1u8; 32]);
        let b = hex::encode([2u8; 32]);
        std::fs::write(&p, format!("{{\"cm\":\"{a}\",\"ts\":2}}\n{{\"cm\":\"{b}\",\"ts\":2}}\n")).unwrap();
        assert!(matches!(Ledger::load_jsonl(&p), Err(Error::Parse { line: 2, .. })));
    }
}
