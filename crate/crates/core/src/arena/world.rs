//! The data and models of one seeded dispute: accuser, suspect and judge.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arena::config::{ArenaConfig, ENSEMBLE_HIDDEN, JUDGE_HIDDEN, SOURCE_HIDDEN, SUSPECT_HIDDEN};
use crate::data::{split_disjoint, BlobTask, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::models::{train, MlpClassifier};

/// Derive a distinct seed for the `k`-th use within a world.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k)
}

/// File name of the data manifest written next to the pool CSVs.
pub const DATA_MANIFEST: &str = "world.json";

/// Every party's data for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldData {
    pub seed: u64,
    pub task: BlobTask,
    /// The accuser's training pool.
    pub accuser_data: Dataset,
    /// The suspect's training pool, disjoint from the accuser's.
    pub suspect_data: Dataset,
    /// Held-out samples neither party trained on.
    pub test: Dataset,
    /// The judge's pools: source training, independent training, public queries.
    pub judge_source_data: Dataset,
    pub judge_independent_data: Dataset,
    pub judge_public: Dataset,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    task: BlobTask,
    pools: BTreeMap<String, Provenance>,
}

impl WorldData {
    pub fn generate(cfg: &ArenaConfig, seed: u64) -> Result<Self> {
        let task = BlobTask::new(seed, cfg.classes, cfg.dim, cfg.spread)?;
        let parent = task.sample(cfg.per_class, sub_seed(seed, 1))?;
        let split = split_disjoint(&parent, [0.45, 0.45, 0.10], sub_seed(seed, 2))?;
        let judge_pool = task.sample(cfg.judge_per_class, sub_seed(seed, 3))?;
        let jsplit = split_disjoint(&judge_pool, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], sub_seed(seed, 4))?;
        Ok(Self {
            seed,
            task,
            accuser_data: split.part_a,
            suspect_data: split.part_b,
            test: split.holdout,
            judge_source_data: jsplit.part_a,
            judge_independent_data: jsplit.part_b,
            judge_public: jsplit.holdout,
        })
    }

    /// Pool names, used as CSV file stems.
    pub fn pools(&self) -> [(&'static str, &Dataset); 6] {
        [
            ("accuser", &self.accuser_data),
            ("suspect", &self.suspect_data),
            ("test", &self.test),
            ("judge-source", &self.judge_source_data),
            ("judge-independent", &self.judge_independent_data),
            ("judge-public", &self.judge_public),
        ]
    }

    /// Write every pool as `<name>.csv` plus a manifest with the task and
    /// each pool's provenance.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut pools = BTreeMap::new();
        for (name, ds) in self.pools() {
            ds.save_csv(&dir.join(format!("{name}.csv")))?;
            pools.insert(name.to_string(), ds.provenance().clone());
        }
        let manifest = Manifest {
            seed: self.seed,
            task: self.task,
            pools,
        };
        let path = dir.join(DATA_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Read what [`WorldData::save`] wrote.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATA_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let pool = |name: &str| -> Result<Dataset> {
            let provenance = manifest
                .pools
                .get(name)
                .ok_or_else(|| Error::Malformed(format!("{}: no entry for pool {name}", path.display())))?;
            let ds = Dataset::load_csv(&dir.join(format!("{name}.csv")))?;
            if ds.class_count() != manifest.task.classes || ds.dim() != manifest.task.dim {
                return Err(Error::Malformed(format!(
                    "pool {name} does not match the task in {}",
                    path.display()
                )));
            }
            Ok(ds.with_provenance(provenance.clone()))
        };
        Ok(Self {
            seed: manifest.seed,
            task: manifest.task,
            accuser_data: pool("accuser")?,
            suspect_data: pool("suspect")?,
            test: pool("test")?,
            judge_source_data: pool("judge-source")?,
            judge_independent_data: pool("judge-independent")?,
            judge_public: pool("judge-public")?,
        })
    }
}

/// Number of independent references the judge trains for fingerprinting.
pub const JUDGE_REFERENCES: usize = 2;

/// All parties' data and independently trained models for one seed.
#[derive(Debug, Clone)]
pub struct World {
    pub data: WorldData,
    /// The accuser's source model, before any watermark.
    pub source: MlpClassifier,
    /// The attacker's transfer ensemble, trained on the accuser's pool.
    pub ensemble: Vec<MlpClassifier>,
    /// The independent suspect: different data and architecture.
    pub suspect: MlpClassifier,
    pub judge_source: MlpClassifier,
    /// Independent models used for calibration.
    pub judge_independents: Vec<MlpClassifier>,
    /// Independent references for the judge's fingerprint generation.
    pub judge_references: Vec<MlpClassifier>,
    /// Independent models kept secret for screening.
    pub holdouts: Vec<MlpClassifier>,
}

impl World {
    pub fn build(cfg: &ArenaConfig, seed: u64) -> Result<Self> {
        Self::train(cfg, WorldData::generate(cfg, seed)?)
    }

    /// Train every party's models on the given data.
    pub fn train(cfg: &ArenaConfig, data: WorldData) -> Result<Self> {
        let seed = data.seed;
        let source = train(&data.accuser_data, &cfg.train(SOURCE_HIDDEN, sub_seed(seed, 10)))?;
        let ensemble = ENSEMBLE_HIDDEN[..cfg.ensemble]
            .iter()
            .enumerate()
            .map(|(k, h)| train(&data.accuser_data, &cfg.train(h, sub_seed(seed, 20 + k as u64))))
            .collect::<Result<Vec<_>>>()?;
        let suspect = train(&data.suspect_data, &cfg.train(SUSPECT_HIDDEN, sub_seed(seed, 30)))?;

        let judge_source = train(&data.judge_source_data, &cfg.train(SOURCE_HIDDEN, sub_seed(seed, 40)))?;
        let independents = |count: usize, offset: u64| {
            (0..count)
                .map(|k| {
                    let h = JUDGE_HIDDEN[k % JUDGE_HIDDEN.len()];
                    train(&data.judge_independent_data, &cfg.train(h, sub_seed(seed, offset + k as u64)))
                })
                .collect::<Result<Vec<_>>>()
        };
        let judge_independents = independents(cfg.calibration_independents, 50)?;
        let judge_references = independents(JUDGE_REFERENCES, 70)?;
        let holdouts = independents(cfg.screening_holdouts, 80)?;

        Ok(Self {
            data,
            source,
            ensemble,
            suspect,
            judge_source,
            judge_independents,
            judge_references,
            holdouts,
        })
    }

    pub fn seed(&self) -> u64 {
        self.data.seed
    }

    fn named_models(&self) -> Vec<(String, &MlpClassifier)> {
        let mut out = vec![
            ("source".to_string(), &self.source),
            ("suspect".to_string(), &self.suspect),
            ("judge-source".to_string(), &self.judge_source),
        ];
        let groups: [(&str, &[MlpClassifier]); 4] = [
            ("ensemble", &self.ensemble),
            ("judge-independent", &self.judge_independents),
            ("judge-reference", &self.judge_references),
            ("holdout", &self.holdouts),
        ];
        for (stem, models) in groups {
            out.extend(models.iter().enumerate().map(|(k, m)| (format!("{stem}-{k}"), m)));
        }
        out
    }

    /// Write every model as `<role>.mlpc` into `dir`.
    pub fn save_models(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, m) in self.named_models() {
            m.save(&dir.join(format!("{name}.mlpc")))?;
        }
        Ok(())
    }

    /// Reassemble a world from saved data and models; model counts follow `cfg`.
    pub fn load(cfg: &ArenaConfig, data: WorldData, models_dir: &Path) -> Result<Self> {
        let one = |name: &str| MlpClassifier::load(&models_dir.join(format!("{name}.mlpc")));
        let many = |stem: &str, count: usize| (0..count).map(|k| one(&format!("{stem}-{k}"))).collect::<Result<Vec<_>>>();
        Ok(Self {
            source: one("source")?,
            ensemble: many("ensemble", cfg.ensemble)?,
            suspect: one("suspect")?,
            judge_source: one("judge-source")?,
            judge_independents: many("judge-independent", cfg.calibration_independents)?,
            judge_references: many("judge-reference", JUDGE_REFERENCES)?,
            holdouts: many("holdout", cfg.screening_holdouts)?,
            data,
        })
    }

    /// The thief's queries: a prefix of the suspect's pool.
    pub fn thief_queries(&self, cfg: &ArenaConfig) -> Dataset {
        prefix(&self.data.suspect_data, cfg.extraction_queries)
    }

    /// The judge's extraction queries, the same count drawn from its public pool.
    pub fn judge_queries(&self, cfg: &ArenaConfig) -> Dataset {
        prefix(&self.data.judge_public, cfg.extraction_queries)
    }

    pub fn ensemble_refs(&self) -> Vec<&MlpClassifier> {
        self.ensemble.iter().collect()
    }

    /// Suspect with the accuser's architecture trained on the suspect's pool.
    pub fn same_structure_suspect(&self, cfg: &ArenaConfig) -> Result<MlpClassifier> {
        train(&self.data.suspect_data, &cfg.train(SOURCE_HIDDEN, sub_seed(self.seed(), 31)))
    }

    /// Suspect with the default architecture trained on the accuser's pool.
    pub fn same_data_suspect(&self, cfg: &ArenaConfig) -> Result<MlpClassifier> {
        train(&self.data.accuser_data, &cfg.train(SUSPECT_HIDDEN, sub_seed(self.seed(), 32)))
    }
}

fn prefix(ds: &Dataset, n: usize) -> Dataset {
    ds.subset(&(0..n.min(ds.len())).collect::<Vec<_>>())
}
