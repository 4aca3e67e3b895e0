//! Decision thresholds calibrated from judge-trained model populations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::claim::SchemeKind;

/// Which calibrated value the judge compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Independent,
    Mixed,
    Extracted,
}

impl ThresholdKind {
    pub const ALL: [ThresholdKind; 3] = [
        ThresholdKind::Independent,
        ThresholdKind::Mixed,
        ThresholdKind::Extracted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ThresholdKind::Independent => "independent",
            ThresholdKind::Mixed => "mixed",
            ThresholdKind::Extracted => "extracted",
        }
    }
}

impl fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ThresholdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown threshold {s:?} (expected independent, mixed or extracted)")))
    }
}

/// Which side of the threshold means "stolen".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    StolenIfAbove,
    StolenIfBelow,
}

/// Per-scheme thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThresholds {
    pub scheme: SchemeKind,
    pub independent: f64,
    pub extracted: f64,
    pub mixed: f64,
    pub direction: Direction,
}

impl DecisionThresholds {
    /// Build from explicit independent and extracted values; mixed is their midpoint.
    pub fn new(scheme: SchemeKind, independent: f64, extracted: f64) -> Result<Self> {
        for (name, v) in [("independent", independent), ("extracted", extracted)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} threshold {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            scheme,
            independent,
            extracted,
            mixed: (independent + extracted) / 2.0,
            direction: Direction::StolenIfAbove,
        })
    }

    /// Independent = highest independent score, extracted = lowest extracted score.
    pub fn from_scores(scheme: SchemeKind, independent_scores: &[f64], extracted_scores: &[f64]) -> Result<Self> {
        if independent_scores.len() < 2 || extracted_scores.len() < 2 {
            return Err(Error::invalid(format!(
                "calibration needs at least 2 independent and 2 extracted models, got {} and {}",
                independent_scores.len(),
                extracted_scores.len()
            )));
        }
        if independent_scores
            .iter()
            .chain(extracted_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("calibration scores must be finite"));
        }
        let independent = independent_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let extracted = extracted_scores.iter().cloned().fold(f64::INFINITY, f64::min);
        Self::new(scheme, independent, extracted)
    }

    pub fn get(&self, kind: ThresholdKind) -> f64 {
        match kind {
            ThresholdKind::Independent => self.independent,
            ThresholdKind::Mixed => self.mixed,
            ThresholdKind::Extracted => self.extracted,
        }
    }

    /// Whether `score` indicates a stolen model at threshold `kind`.
    pub fn exceeds(&self, score: f64, kind: ThresholdKind) -> bool {
        let t = self.get(kind);
        match self.direction {
            Direction::StolenIfAbove => score > t,
            Direction::StolenIfBelow => score < t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_examples() {
        let t = DecisionThresholds::new(SchemeKind::Adi, 0.10, 0.48).unwrap();
        assert!((t.mixed - 0.29).abs() < 1e-12);
        let t = DecisionThresholds::new(SchemeKind::Ewe, 0.018, 0.64).unwrap();
        assert!((t.mixed - 0.329).abs() < 1e-12);
        let t = DecisionThresholds::new(SchemeKind::Di, 0.5, 0.5).unwrap();
        assert_eq!(t.mixed, 0.5);
    }

    #[test]
    fn max_and_min_rules() {
        let t = DecisionThresholds::from_scores(SchemeKind::Adi, &[0.1, 0.3, 0.2], &[0.9, 0.6, 0.8]).unwrap();
        assert_eq!(t.independent, 0.3);
        assert_eq!(t.extracted, 0.6);
    }

    #[test]
    fn degenerate_population_rejected() {
        assert!(DecisionThresholds::from_scores(SchemeKind::Adi, &[0.1], &[0.9, 0.6]).is_err());
        assert!(DecisionThresholds::from_scores(SchemeKind::Adi, &[0.1, 0.2], &[]).is_err());
    }
}
