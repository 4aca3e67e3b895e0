//! Per-seed experiment pipeline: calibrate, claim honestly, forge, resolve,
//! screen and defend, emitting one record per evaluated case.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arena::config::{ArenaConfig, SUSPECT_HIDDEN};
use crate::arena::world::{sub_seed, World};
use crate::attack::forge::{forge, ForgeInputs, ForgeOutcome};
use crate::attack::AttackConfig;
use crate::data::Dataset;
use crate::defense::{adversarial_train_pgd, screen_trigger_set, PgdConfig, ScreenVerdict, ScreeningPolicy};
use crate::error::Result;
use crate::models::{extract_ftal, extract_ftal_with_labels, MlpClassifier};
use crate::protocol::claim::{OwnershipClaim, SchemeKind};
use crate::protocol::ledger::Ledger;
use crate::protocol::resolve::{resolve, Suspect, Verdict};
use crate::protocol::thresholds::{DecisionThresholds, ThresholdKind};
use crate::protocol::publish;
use crate::schemes::dawn::{DawnApi, DawnKey};
use crate::schemes::{self, adi_claim, di_claim, ewe_claim, lib_claim, lukas_claim, LukasConfig};

/// What a record evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    /// Honest claim against an extracted copy of the watermarked source.
    HonestStolen,
    /// Honest claim against the independent suspect.
    HonestIndependent,
    /// Forged claim against the independent suspect.
    Forged,
    /// Forged claim against a suspect sharing the source's architecture.
    ForgedSameStructure,
    /// Forged claim against a suspect trained on the accuser's data.
    ForgedSameData,
    /// Forged claim made without a transfer ensemble.
    ForgedNoEnsemble,
    /// Forged claim at one point of the perturbation sweep.
    Sweep,
    /// Forged at the defender's bound against the undefended suspect.
    DefenseUndefended,
    /// Forged at the defender's bound against the hardened suspect.
    DefenseHardened,
    /// Forged at twice the defender's bound against the hardened suspect.
    DefenseHardenedDouble,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::HonestStolen => "honest-stolen",
            Case::HonestIndependent => "honest-independent",
            Case::Forged => "forged",
            Case::ForgedSameStructure => "forged-same-structure",
            Case::ForgedSameData => "forged-same-data",
            Case::ForgedNoEnsemble => "forged-no-ensemble",
            Case::Sweep => "sweep",
            Case::DefenseUndefended => "defense-undefended",
            Case::DefenseHardened => "defense-hardened",
            Case::DefenseHardenedDouble => "defense-hardened-double",
        }
    }
}

/// Statistics of a forgery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgeStats {
    pub candidates: usize,
    pub retained: usize,
    pub source_successes: usize,
    pub mu_preserved: usize,
    /// DAWN only: fraction of labels that recompute from the key.
    pub hmac_agreement: Option<f64>,
}

impl ForgeStats {
    pub fn of(outcome: &ForgeOutcome) -> Result<Self> {
        let claim = &outcome.claim;
        Ok(Self {
            candidates: outcome.candidates,
            retained: outcome.retained,
            source_successes: outcome.source_successes,
            mu_preserved: outcome.mu_preserved,
            hmac_agreement: if claim.scheme == SchemeKind::Dawn {
                Some(schemes::dawn::label_agreement(claim)?)
            } else {
                None
            },
        })
    }

    pub fn mu_retention(&self) -> f64 {
        if self.source_successes == 0 {
            0.0
        } else {
            self.mu_preserved as f64 / self.source_successes as f64
        }
    }
}

/// One evaluated case, serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub seed: u64,
    pub scheme: SchemeKind,
    pub case: Case,
    pub epsilon: Option<f64>,
    pub threshold_kind: ThresholdKind,
    pub thresholds: DecisionThresholds,
    pub verdict: Verdict,
    /// Suspect score: MOR accuracy, or effect size for DI.
    pub score: f64,
    pub exceeds_mixed: bool,
    pub exceeds_extracted: bool,
    pub trigger_size: usize,
    pub screening: Option<ScreenVerdict>,
    pub forge: Option<ForgeStats>,
    /// Clean accuracy of the suspect on held-out data.
    pub clean_accuracy: Option<f64>,
    pub wall_ms: u64,
}

impl RunRecord {
    /// The record without its wall-clock time, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_ms: 0,
            ..self.clone()
        }
    }
}

/// Calibrated thresholds with the scores they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub thresholds: DecisionThresholds,
    pub independent_scores: Vec<f64>,
    pub extracted_scores: Vec<f64>,
}

/// An honest claim and the model whose ownership it asserts.
#[derive(Debug, Clone)]
pub struct HonestClaim {
    pub claim: OwnershipClaim,
    pub model: MlpClassifier,
    pub dawn_key: Option<DawnKey>,
}

/// Inputs for generating an honest claim.
pub struct HonestInputs<'a> {
    pub source: &'a MlpClassifier,
    pub train: &'a Dataset,
    /// Queries whose API answers form the DAWN trigger set.
    pub queries: &'a Dataset,
    /// Non-member data for DI.
    pub public: &'a Dataset,
    /// Independent references for fingerprinting.
    pub references: Vec<&'a MlpClassifier>,
    pub seed: u64,
    pub accuser_id: &'a str,
}

/// Run the scheme's honest generator.
pub fn honest_claim(scheme: SchemeKind, inp: &HonestInputs<'_>, cfg: &ArenaConfig) -> Result<HonestClaim> {
    let wm = cfg.watermark(inp.seed);
    let size = cfg.trigger_size;
    let plain = |claim| HonestClaim {
        claim,
        model: inp.source.clone(),
        dawn_key: None,
    };
    Ok(match scheme {
        SchemeKind::Adi => {
            let (claim, model) = adi_claim(inp.source, inp.train, size, inp.seed, &wm, inp.accuser_id)?;
            HonestClaim { claim, model, dawn_key: None }
        }
        SchemeKind::Ewe => {
            let (claim, model) = ewe_claim(inp.source, inp.train, size, inp.seed, &wm, inp.accuser_id)?;
            HonestClaim { claim, model, dawn_key: None }
        }
        SchemeKind::Lib => {
            let (claim, model) =
                lib_claim(inp.source, inp.train, size, inp.seed, cfg.lib_epsilon, &wm, inp.accuser_id)?;
            HonestClaim { claim, model, dawn_key: None }
        }
        SchemeKind::Dawn => {
            let key = DawnKey::generate(inp.seed);
            let claim = schemes::dawn_record(inp.source, key, cfg.dawn_rate, inp.queries, inp.accuser_id)?;
            HonestClaim {
                claim,
                model: inp.source.clone(),
                dawn_key: Some(key),
            }
        }
        SchemeKind::Lukas => {
            let extracted = (0..2)
                .map(|k| extract_ftal(inp.source, inp.train.features(), &cfg.extraction(sub_seed(inp.seed, 100 + k))))
                .collect::<Result<Vec<_>>>()?;
            let ext: Vec<&MlpClassifier> = extracted.iter().collect();
            let lcfg = LukasConfig {
                attack: cfg.attack(inp.seed),
                ..LukasConfig::default()
            };
            plain(lukas_claim(
                inp.source,
                inp.train,
                size,
                inp.seed,
                &ext,
                &inp.references,
                &lcfg,
                inp.accuser_id,
            )?)
        }
        SchemeKind::Di => plain(di_claim(
            inp.source,
            inp.train,
            inp.public,
            cfg.di_members,
            cfg.di_public,
            inp.seed,
            &cfg.di(),
            inp.accuser_id,
        )?),
    })
}

/// Extract a copy of the claimed model by fine-tuning it on the answers to
/// `queries` (through the watermarking API for DAWN).
pub fn extract(honest: &HonestClaim, queries: &Dataset, cfg: &ArenaConfig, seed: u64) -> Result<MlpClassifier> {
    match honest.dawn_key {
        Some(key) => {
            let answers = DawnApi::new(&honest.model, key, cfg.dawn_rate).answer(queries.features())?;
            extract_ftal_with_labels(&honest.model, queries.features(), &answers.returned, &cfg.dawn_extraction(seed))
        }
        None => extract_ftal(&honest.model, queries.features(), &cfg.extraction(seed)),
    }
}

/// The judge's calibration: its own source, honestly claimed, scored on its
/// independent models and on extracted copies.
pub fn calibrate(world: &World, scheme: SchemeKind, cfg: &ArenaConfig) -> Result<Calibration> {
    let queries = world.judge_queries(cfg);
    let inp = HonestInputs {
        source: &world.judge_source,
        train: &world.data.judge_source_data,
        queries: &queries,
        public: &world.data.judge_public,
        references: world.judge_references.iter().collect(),
        seed: sub_seed(world.seed(), 200),
        accuser_id: "judge",
    };
    let honest = honest_claim(scheme, &inp, cfg)?;
    let independent_scores = world
        .judge_independents
        .iter()
        .map(|m| schemes::score(m, &honest.claim))
        .collect::<Result<Vec<_>>>()?;
    let extracted_scores = (0..cfg.calibration_extracted as u64)
        .map(|k| {
            let m = extract(&honest, &queries, cfg, sub_seed(world.seed(), 210 + k))?;
            schemes::score(&m, &honest.claim)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration {
        thresholds: DecisionThresholds::from_scores(scheme, &independent_scores, &extracted_scores)?,
        independent_scores,
        extracted_scores,
    })
}

struct Recorder<'a> {
    cfg: &'a ArenaConfig,
    digest: String,
    seed: u64,
    records: Vec<RunRecord>,
}

struct Evaluation<'a> {
    scheme: SchemeKind,
    case: Case,
    epsilon: Option<f64>,
    thresholds: &'a DecisionThresholds,
    claim: &'a OwnershipClaim,
    source: &'a MlpClassifier,
    suspect: &'a MlpClassifier,
    screening: Option<ScreenVerdict>,
    forge: Option<ForgeStats>,
    clean_accuracy: Option<f64>,
    started: Instant,
}

impl Recorder<'_> {
    fn push(&mut self, e: Evaluation<'_>) -> Result<()> {
        let mut ledger = Ledger::new();
        publish(&mut ledger, e.claim)?;
        let kind = self.cfg.threshold;
        let verdict = resolve(e.claim, &Suspect::new(e.suspect), e.thresholds, kind, &ledger, e.source)?;
        let score = verdict.morr_acc_suspect;
        self.records.push(RunRecord {
            config_digest: self.digest.clone(),
            seed: self.seed,
            scheme: e.scheme,
            case: e.case,
            epsilon: e.epsilon,
            threshold_kind: kind,
            thresholds: *e.thresholds,
            verdict,
            score,
            exceeds_mixed: e.thresholds.exceeds(score, ThresholdKind::Mixed),
            exceeds_extracted: e.thresholds.exceeds(score, ThresholdKind::Extracted),
            trigger_size: e.claim.trigger.len(),
            screening: e.screening,
            forge: e.forge,
            clean_accuracy: e.clean_accuracy,
            wall_ms: e.started.elapsed().as_millis() as u64,
        });
        Ok(())
    }
}

fn forge_inputs<'a>(
    world: &'a World,
    cfg: &ArenaConfig,
    ensemble: Vec<&'a MlpClassifier>,
    attack: AttackConfig,
) -> ForgeInputs<'a> {
    ForgeInputs {
        source: &world.source,
        ensemble,
        data: &world.data.accuser_data,
        public: Some(&world.data.test),
        size: cfg.trigger_size,
        attack,
        lib_epsilon: cfg.lib_epsilon,
        dawn_key: DawnKey::generate(sub_seed(world.seed(), 300)),
        dawn_rate: cfg.dawn_rate,
        di: cfg.di(),
        accuser_id: "accuser".into(),
    }
}

/// The accuser's honest claim on its source and a thief's extracted copy
/// of the claimed model, built from the thief's queries.
pub fn accuser_claim(world: &World, scheme: SchemeKind, cfg: &ArenaConfig) -> Result<(HonestClaim, MlpClassifier)> {
    let queries = world.thief_queries(cfg);
    let inp = HonestInputs {
        source: &world.source,
        train: &world.data.accuser_data,
        queries: &queries,
        public: &world.data.test,
        references: world.ensemble.iter().take(2).collect(),
        seed: sub_seed(world.seed(), 400),
        accuser_id: "accuser",
    };
    let honest = honest_claim(scheme, &inp, cfg)?;
    let stolen = extract(&honest, &queries, cfg, sub_seed(world.seed(), 410))?;
    Ok((honest, stolen))
}

/// The attacker's forged claim on the untouched source, using the full
/// transfer ensemble at the configured bound.
pub fn forged_claim(world: &World, scheme: SchemeKind, cfg: &ArenaConfig) -> Result<ForgeOutcome> {
    let attack = cfg.attack(sub_seed(world.seed(), 500));
    forge(scheme, &forge_inputs(world, cfg, world.ensemble_refs(), attack))
}

/// An Adi forgery at bound `epsilon` with the given transfer ensemble, as
/// used by the sweep, the ablation and the defense experiment.
pub fn adi_forgery(world: &World, cfg: &ArenaConfig, epsilon: f64, ensemble: Vec<&MlpClassifier>) -> Result<ForgeOutcome> {
    let attack = AttackConfig {
        epsilon,
        ..cfg.attack(sub_seed(world.seed(), 600))
    };
    forge(SchemeKind::Adi, &forge_inputs(world, cfg, ensemble, attack))
}

/// The judge's screening policy over the world's holdout independents.
pub fn screening_policy<'a>(world: &'a World, cfg: &ArenaConfig) -> ScreeningPolicy<'a> {
    ScreeningPolicy {
        holdout_independents: world.holdouts.iter().collect(),
        flag_threshold: cfg.flag_threshold,
    }
}

/// The independent suspect retrained from scratch with PGD adversarial
/// training at the defender's bound.
pub fn hardened_suspect(world: &World, cfg: &ArenaConfig) -> Result<MlpClassifier> {
    let pgd = PgdConfig {
        epochs: cfg.defense_epochs,
        ..PgdConfig::new(cfg.defense_epsilon)
    };
    adversarial_train_pgd(
        &world.data.suspect_data,
        &cfg.train(SUSPECT_HIDDEN, sub_seed(world.seed(), 30)),
        &pgd,
    )
}

/// Run every configured experiment on one seed.
pub fn run_seed(cfg: &ArenaConfig, seed: u64) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let world = World::build(cfg, seed)?;
    run_world(cfg, &world)
}

/// Run every configured experiment on an already built world.
pub fn run_world(cfg: &ArenaConfig, world: &World) -> Result<Vec<RunRecord>> {
    let seed = world.seed();
    let mut rec = Recorder {
        cfg,
        digest: hex::encode(cfg.digest()),
        seed,
        records: Vec::new(),
    };
    let policy = screening_policy(world, cfg);
    let presets = if cfg.presets {
        Some((world.same_structure_suspect(cfg)?, world.same_data_suspect(cfg)?))
    } else {
        None
    };
    let mut adi_thresholds = None;

    for &scheme in &cfg.schemes {
        let started = Instant::now();
        let cal = calibrate(world, scheme, cfg)?;
        let th = cal.thresholds;
        log::info!(
            "seed {seed} {scheme}: independent {:.3} extracted {:.3} mixed {:.3}",
            th.independent,
            th.extracted,
            th.mixed
        );
        if scheme == SchemeKind::Adi {
            adi_thresholds = Some(th);
        }

        let (honest, stolen) = accuser_claim(world, scheme, cfg)?;
        let honest_screen = screen_trigger_set(&honest.claim, &policy, &th)?;
        for (case, suspect, screening) in [
            (Case::HonestStolen, &stolen, None),
            (Case::HonestIndependent, &world.suspect, Some(honest_screen)),
        ] {
            rec.push(Evaluation {
                scheme,
                case,
                epsilon: None,
                thresholds: &th,
                claim: &honest.claim,
                source: &honest.model,
                suspect,
                screening,
                forge: None,
                clean_accuracy: None,
                started,
            })?;
        }

        let started = Instant::now();
        let forged = forged_claim(world, scheme, cfg)?;
        let stats = ForgeStats::of(&forged)?;
        let forged_screen = screen_trigger_set(&forged.claim, &policy, &th)?;
        let mut targets = vec![(Case::Forged, &world.suspect, Some(forged_screen))];
        if let Some((same_structure, same_data)) = &presets {
            targets.push((Case::ForgedSameStructure, same_structure, None));
            targets.push((Case::ForgedSameData, same_data, None));
        }
        for (case, suspect, screening) in targets {
            rec.push(Evaluation {
                scheme,
                case,
                epsilon: Some(forged_epsilon(scheme, cfg)),
                thresholds: &th,
                claim: &forged.claim,
                source: &world.source,
                suspect,
                screening,
                forge: Some(stats),
                clean_accuracy: None,
                started,
            })?;
        }
    }

    let Some(th) = adi_thresholds else {
        return Ok(rec.records);
    };
    let forge_adi_at = |eps: f64, ensemble: Vec<&MlpClassifier>| adi_forgery(world, cfg, eps, ensemble);
    // forgeries with the full ensemble, shared by the sweep and the defense
    let mut forged_at: Vec<(f64, ForgeOutcome)> = Vec::new();
    let mut ensemble_forgery = |eps: f64| -> Result<ForgeOutcome> {
        if let Some((_, f)) = forged_at.iter().find(|(e, _)| *e == eps) {
            return Ok(f.clone());
        }
        let f = forge_adi_at(eps, world.ensemble_refs())?;
        forged_at.push((eps, f.clone()));
        Ok(f)
    };

    if cfg.ablation {
        let started = Instant::now();
        let f = forge_adi_at(cfg.epsilon, Vec::new())?;
        rec.push(Evaluation {
            scheme: SchemeKind::Adi,
            case: Case::ForgedNoEnsemble,
            epsilon: Some(cfg.epsilon),
            thresholds: &th,
            claim: &f.claim,
            source: &world.source,
            suspect: &world.suspect,
            screening: None,
            forge: Some(ForgeStats::of(&f)?),
            clean_accuracy: None,
            started,
        })?;
    }

    for &eps in &cfg.sweep {
        let started = Instant::now();
        let f = ensemble_forgery(eps)?;
        rec.push(Evaluation {
            scheme: SchemeKind::Adi,
            case: Case::Sweep,
            epsilon: Some(eps),
            thresholds: &th,
            claim: &f.claim,
            source: &world.source,
            suspect: &world.suspect,
            screening: None,
            forge: Some(ForgeStats::of(&f)?),
            clean_accuracy: None,
            started,
        })?;
    }

    if cfg.defense_epsilon > 0.0 {
        let started = Instant::now();
        let hardened = hardened_suspect(world, cfg)?;
        let at_bound = ensemble_forgery(cfg.defense_epsilon)?;
        let doubled = ensemble_forgery(2.0 * cfg.defense_epsilon)?;
        let undefended_acc = world.suspect.dataset_accuracy(&world.data.test)?;
        let hardened_acc = hardened.dataset_accuracy(&world.data.test)?;
        for (case, f, suspect, acc) in [
            (Case::DefenseUndefended, &at_bound, &world.suspect, undefended_acc),
            (Case::DefenseHardened, &at_bound, &hardened, hardened_acc),
            (Case::DefenseHardenedDouble, &doubled, &hardened, hardened_acc),
        ] {
            rec.push(Evaluation {
                scheme: SchemeKind::Adi,
                case,
                epsilon: Some(if case == Case::DefenseHardenedDouble {
                    2.0 * cfg.defense_epsilon
                } else {
                    cfg.defense_epsilon
                }),
                thresholds: &th,
                claim: &f.claim,
                source: &world.source,
                suspect,
                screening: None,
                forge: Some(ForgeStats::of(f)?),
                clean_accuracy: Some(acc),
                started,
            })?;
        }
    }
    Ok(rec.records)
}

fn forged_epsilon(scheme: SchemeKind, cfg: &ArenaConfig) -> f64 {
    if scheme == SchemeKind::Lib {
        cfg.lib_epsilon
    } else {
        cfg.epsilon
    }
}

/// Run all configured seeds, fanned out over the available cores. Records
/// come back in seed order.
pub fn run(cfg: &ArenaConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let seeds = cfg.seed_list();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let mut results: Vec<Option<Result<Vec<RunRecord>>>> = (0..seeds.len()).map(|_| None).collect();
    let done = Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let out = run_seed(cfg, seed);
                done.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r.expect("every seed ran")?);
    }
    Ok(out)
}
