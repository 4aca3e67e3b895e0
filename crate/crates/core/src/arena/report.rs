//! JSON-lines persistence of run records and seed-averaged report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arena::pipeline::{Case, RunRecord};
use crate::error::{Error, Result};
use crate::protocol::claim::SchemeKind;

/// Append records to a JSON-lines file.
pub fn save_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One cell of the report: a scheme and case at one seed, or their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: SchemeKind,
    pub case: Case,
    pub epsilon: Option<f64>,
    /// Seed, or `mean` for the average over seeds.
    pub seed: String,
    pub score: f64,
    pub independent: f64,
    pub mixed: f64,
    pub extracted: f64,
    pub exceeds_mixed: bool,
    pub exceeds_extracted: bool,
}

/// Threshold and effectiveness tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

type CellKey = (SchemeKind, Case, Option<u64>);

fn cell_key(r: &RunRecord) -> CellKey {
    (r.scheme, r.case, r.epsilon.map(f64::to_bits))
}

impl Report {
    /// Group records by scheme, case and perturbation bound; emit every
    /// seed's values followed by their mean.
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no records to report"));
        }
        let mut cells: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
        for r in records {
            if r.thresholds.scheme != r.scheme {
                return Err(Error::invalid(format!(
                    "record for {} carries thresholds for {}",
                    r.scheme, r.thresholds.scheme
                )));
            }
            cells.entry(cell_key(r)).or_default().push(r);
        }
        let mut rows = Vec::new();
        for ((scheme, case, _), rs) in cells {
            for r in &rs {
                rows.push(ReportRow {
                    scheme,
                    case,
                    epsilon: r.epsilon,
                    seed: r.seed.to_string(),
                    score: r.score,
                    independent: r.thresholds.independent,
                    mixed: r.thresholds.mixed,
                    extracted: r.thresholds.extracted,
                    exceeds_mixed: r.exceeds_mixed,
                    exceeds_extracted: r.exceeds_extracted,
                });
            }
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let score = mean(&|r| r.score);
            let mixed = mean(&|r| r.thresholds.mixed);
            let extracted = mean(&|r| r.thresholds.extracted);
            rows.push(ReportRow {
                scheme,
                case,
                epsilon: rs[0].epsilon,
                seed: "mean".into(),
                score,
                independent: mean(&|r| r.thresholds.independent),
                mixed,
                extracted,
                exceeds_mixed: score > mixed,
                exceeds_extracted: score > extracted,
            });
        }
        Ok(Self { rows })
    }

    pub fn means(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.seed == "mean")
    }

    /// Mean row for a scheme and case, ignoring the perturbation bound.
    pub fn mean(&self, scheme: SchemeKind, case: Case) -> Option<&ReportRow> {
        self.means().find(|r| r.scheme == scheme && r.case == case)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows = rdr
            .deserialize()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| Error::Parse {
                    path: "<report>".into(),
                    line: i + 2,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<ReportRow>>>()?;
        if rows.is_empty() {
            return Err(Error::invalid("report has no rows"));
        }
        Ok(Self { rows })
    }

    /// Aligned text: a thresholds table per scheme and a forged-claim table
    /// with one row per suspect preset. `*` marks a mean above the mixed
    /// threshold, `**` above the extracted one as well.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let schemes: Vec<SchemeKind> = SchemeKind::ALL
            .into_iter()
            .filter(|s| self.means().any(|r| r.scheme == *s))
            .collect();

        out.push_str("Decision thresholds (mean over seeds)\n");
        let _ = writeln!(out, "{:<12}{:>12}{:>12}{:>12}", "scheme", "independent", "mixed", "extracted");
        for &s in &schemes {
            if let Some(r) = self.means().find(|r| r.scheme == s) {
                let _ = writeln!(
                    out,
                    "{:<12}{:>12.3}{:>12.3}{:>12.3}",
                    s.name(),
                    r.independent,
                    r.mixed,
                    r.extracted
                );
            }
        }

        out.push_str("\nClaim scores (mean over seeds; * > mixed, ** > extracted)\n");
        let _ = write!(out, "{:<24}", "case");
        for s in &schemes {
            let _ = write!(out, "{:>10}", s.name());
        }
        out.push('\n');
        for case in [
            Case::HonestStolen,
            Case::HonestIndependent,
            Case::Forged,
            Case::ForgedSameStructure,
            Case::ForgedSameData,
        ] {
            if !self.means().any(|r| r.case == case) {
                continue;
            }
            let _ = write!(out, "{:<24}", case.name());
            for &s in &schemes {
                let cell = match self.mean(s, case) {
                    Some(r) => {
                        let mark = match (r.exceeds_mixed, r.exceeds_extracted) {
                            (_, true) => "**",
                            (true, false) => "*",
                            _ => "",
                        };
                        format!("{:.3}{mark}", r.score)
                    }
                    None => "-".into(),
                };
                let _ = write!(out, "{cell:>10}");
            }
            out.push('\n');
        }

        let sweep: Vec<&ReportRow> = self.means().filter(|r| r.case == Case::Sweep).collect();
        if !sweep.is_empty() {
            out.push_str("\nPerturbation sweep (adi, independent suspect)\n");
            for r in sweep {
                let _ = writeln!(out, "  epsilon {:<8.3} score {:.3}", r.epsilon.unwrap_or(f64::NAN), r.score);
            }
        }
        out
    }
}
