//! Flat, versioned experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::models::{Hash, TrainConfig};
use crate::protocol::claim::SchemeKind;
use crate::protocol::thresholds::ThresholdKind;
use crate::schemes::dawn::DEFAULT_RATE;
use crate::schemes::{DiConfig, WatermarkConfig};

/// Current config format version.
pub const CONFIG_VERSION: u32 = 1;

/// Every knob of an arena run. Serialized as a flat TOML table; unknown keys
/// are rejected and missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaConfig {
    pub version: u32,
    /// First seed; seed `i` of a run is `base_seed + i`.
    pub base_seed: u64,
    pub seeds: usize,
    pub schemes: Vec<SchemeKind>,
    pub threshold: ThresholdKind,

    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    /// Samples per class in the parties' shared pool.
    pub per_class: usize,
    /// Samples per class in the judge's own pool.
    pub judge_per_class: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    /// Queries a thief sends to the claimed model's API.
    pub extraction_queries: usize,
    pub extraction_epochs: usize,
    pub extraction_lr: f64,
    /// DAWN copies are fitted closely to the API's answers.
    pub dawn_extraction_epochs: usize,
    pub dawn_extraction_batch: usize,
    pub dawn_extraction_lr: f64,
    pub dawn_extraction_l2: f64,

    pub trigger_size: usize,
    pub wm_learning_rate: f64,
    pub wm_triggers_per_batch: usize,
    pub wm_target_accuracy: f64,
    pub wm_max_epochs: usize,
    pub lib_epsilon: f64,
    pub dawn_rate: f64,
    pub di_members: usize,
    pub di_public: usize,

    pub calibration_independents: usize,
    pub calibration_extracted: usize,
    pub screening_holdouts: usize,
    pub flag_threshold: f64,

    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Attacker-trained independent models in the transfer ensemble.
    pub ensemble: usize,

    /// Also score forged claims on the same-structure and same-data suspects.
    pub presets: bool,
    /// Perturbation bounds for the forged-claim sweep; empty disables it.
    pub sweep: Vec<f64>,
    /// Forge without an ensemble as well, for the transfer ablation.
    pub ablation: bool,
    /// Defender's PGD bound; 0 disables the defense experiment.
    pub defense_epsilon: f64,
    pub defense_epochs: usize,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            base_seed: 0,
            seeds: 5,
            schemes: SchemeKind::ALL.to_vec(),
            threshold: ThresholdKind::Mixed,
            classes: 10,
            dim: 20,
            spread: 0.08,
            per_class: 600,
            judge_per_class: 300,
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.1,
            l2_penalty: 1e-4,
            extraction_queries: 1000,
            extraction_epochs: 5,
            extraction_lr: 0.01,
            dawn_extraction_epochs: 100,
            dawn_extraction_batch: 4,
            dawn_extraction_lr: 0.09,
            dawn_extraction_l2: 0.0,
            trigger_size: 100,
            wm_learning_rate: 0.05,
            wm_triggers_per_batch: 64,
            wm_target_accuracy: 0.95,
            wm_max_epochs: 100,
            lib_epsilon: 0.3,
            dawn_rate: DEFAULT_RATE,
            di_members: 100,
            di_public: 100,
            calibration_independents: 5,
            calibration_extracted: 5,
            screening_holdouts: 3,
            flag_threshold: 1.0,
            epsilon: 0.3,
            alpha: 0.03,
            iterations: 100,
            restarts: 10,
            ensemble: 4,
            presets: true,
            sweep: vec![0.05, 0.1, 0.2, 0.3],
            ablation: true,
            defense_epsilon: 0.05,
            defense_epochs: 30,
        }
    }
}

impl ArenaConfig {
    /// A configuration with every optional experiment disabled.
    pub fn minimal() -> Self {
        Self {
            presets: false,
            sweep: Vec::new(),
            ablation: false,
            defense_epsilon: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds == 0 {
            return Err(Error::invalid("seeds must be >= 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::invalid("at least one scheme is required"));
        }
        if self.calibration_independents < 2 || self.calibration_extracted < 2 {
            return Err(Error::invalid("calibration needs at least 2 independent and 2 extracted models"));
        }
        if self.extraction_queries == 0 {
            return Err(Error::invalid("extraction_queries must be >= 1"));
        }
        if self.screening_holdouts < 2 {
            return Err(Error::invalid("screening needs at least 2 holdout models"));
        }
        if self.ensemble > ENSEMBLE_HIDDEN.len() {
            return Err(Error::invalid(format!(
                "ensemble size {} exceeds the {} available architectures",
                self.ensemble,
                ENSEMBLE_HIDDEN.len()
            )));
        }
        if !(self.extraction_lr < self.learning_rate && self.dawn_extraction_lr < self.learning_rate) {
            return Err(Error::invalid("extraction learning rates must be below learning_rate"));
        }
        if self.sweep.iter().any(|e| !(*e >= 0.0)) || !(self.defense_epsilon >= 0.0) {
            return Err(Error::invalid("perturbation bounds must be >= 0"));
        }
        self.attack(0).validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            line: 0,
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> Hash {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn train(&self, hidden: &[usize], seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: hidden.to_vec(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            l2_penalty: self.l2_penalty,
        }
    }

    pub fn extraction(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: Vec::new(),
            epochs: self.extraction_epochs,
            batch_size: self.batch_size,
            learning_rate: self.extraction_lr,
            seed,
            l2_penalty: self.l2_penalty,
        }
    }

    pub fn dawn_extraction(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: Vec::new(),
            epochs: self.dawn_extraction_epochs,
            batch_size: self.dawn_extraction_batch,
            learning_rate: self.dawn_extraction_lr,
            seed,
            l2_penalty: self.dawn_extraction_l2,
        }
    }

    pub fn watermark(&self, seed: u64) -> WatermarkConfig {
        WatermarkConfig {
            learning_rate: self.wm_learning_rate,
            batch_size: self.batch_size,
            triggers_per_batch: self.wm_triggers_per_batch,
            target_accuracy: self.wm_target_accuracy,
            max_epochs: self.wm_max_epochs,
            l2_penalty: self.l2_penalty,
            seed,
        }
    }

    pub fn attack(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            alpha: self.alpha,
            iterations: self.iterations,
            beta: None,
            restarts: self.restarts,
            seed,
        }
    }

    pub fn di(&self) -> DiConfig {
        DiConfig::default()
    }
}

/// Hidden widths of the accuser's source model.
pub const SOURCE_HIDDEN: &[usize] = &[64, 64];
/// Hidden widths of the default suspect.
pub const SUSPECT_HIDDEN: &[usize] = &[96, 48];
/// Hidden widths of the attacker's transfer ensemble, in order of use.
pub const ENSEMBLE_HIDDEN: &[&[usize]] = &[&[64, 64], &[128], &[64, 32], &[48, 48, 48]];
/// Hidden widths cycled through by the judge's independent models.
pub const JUDGE_HIDDEN: &[&[usize]] = &[&[64, 64], &[96, 48], &[128], &[64, 32], &[48, 48, 48]];
