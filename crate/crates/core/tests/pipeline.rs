//! End-to-end behaviour of the pipeline on a small world.

mod common;

use std::sync::OnceLock;

use morarena::arena::{
    self, accuser_claim, calibrate, forged_claim, load_records, run_world, save_records, ArenaConfig, Case, Report,
    World, WorldData,
};
use morarena::attack::{ifgsm, AttackConfig, Objective, StepDirection};
use morarena::data::{gen_blobs, split_disjoint};
use morarena::defense::{adversarial_train_pgd, PgdConfig};
use morarena::models::{extract_ftal, train, MlpClassifier, TrainConfig};
use morarena::protocol::claim::{OwnershipClaim, SchemeKind};
use morarena::protocol::ledger::Ledger;
use morarena::protocol::publish;
use morarena::protocol::resolve::{resolve, Suspect, Verdict};
use morarena::protocol::thresholds::{DecisionThresholds, ThresholdKind};
use morarena::schemes::{di_claim, di_effect, lukas, DiConfig};
use morarena::tensor::Tensor;

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| World::build(&common::small_config(), 11).unwrap())
}

fn thresholds(scheme: SchemeKind) -> DecisionThresholds {
    calibrate(world(), scheme, &common::small_config()).unwrap().thresholds
}

fn resolve_alone(claim: &OwnershipClaim, suspect: &MlpClassifier, source: &MlpClassifier) -> Verdict {
    let mut ledger = Ledger::new();
    publish(&mut ledger, claim).unwrap();
    let th = thresholds(claim.scheme);
    resolve(claim, &Suspect::new(suspect), &th, ThresholdKind::Mixed, &ledger, source).unwrap()
}

/// Largest L-infinity distance from a trigger to its nearest sample.
fn distance_to_data(trigger: &Tensor, data: &Tensor) -> f64 {
    (0..trigger.rows())
        .map(|i| {
            (0..data.rows())
                .map(|j| {
                    trigger
                        .row(i)
                        .iter()
                        .zip(data.row(j))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[test]
fn runs_are_reproducible_except_wall_clock() {
    let cfg = common::small_config();
    let a = run_world(&cfg, world()).unwrap();
    let b = arena::run_seed(&cfg, 11).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.without_timing(), y.without_timing());
    }
}

#[test]
fn run_keeps_seed_order() {
    let cfg = ArenaConfig {
        seeds: 3,
        base_seed: 4,
        schemes: vec![SchemeKind::Adi],
        presets: false,
        sweep: Vec::new(),
        ablation: false,
        defense_epsilon: 0.0,
        ..common::small_config()
    };
    let seeds: Vec<u64> = arena::run(&cfg).unwrap().iter().map(|r| r.seed).collect();
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    assert_eq!(seeds, sorted);
    assert_eq!(seeds.first(), Some(&4));
    assert_eq!(seeds.last(), Some(&6));
}

#[test]
fn calibration_is_deterministic() {
    for scheme in SchemeKind::ALL {
        assert_eq!(thresholds(scheme), thresholds(scheme), "{scheme}");
    }
}

#[test]
fn config_round_trips_and_digests_deterministically() {
    let cfg = common::small_config();
    let back = ArenaConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.digest(), cfg.digest());
    assert_ne!(ArenaConfig::default().digest(), cfg.digest());
    assert!(ArenaConfig::parse("no_such_key = 1").is_err());
    assert!(ArenaConfig::parse("version = 99").is_err());
}

#[test]
fn world_survives_save_and_load() {
    let cfg = common::small_config();
    let dir = tempfile::tempdir().unwrap();
    world().data.save(&dir.path().join("data")).unwrap();
    world().save_models(&dir.path().join("models")).unwrap();
    let data = WorldData::load(&dir.path().join("data")).unwrap();
    assert_eq!(data, world().data);
    let loaded = World::load(&cfg, data, &dir.path().join("models")).unwrap();
    assert_eq!(loaded.source.digest(), world().source.digest());
    assert_eq!(loaded.holdouts.len(), cfg.screening_holdouts);
    for (a, b) in loaded.ensemble.iter().zip(&world().ensemble) {
        assert_eq!(a.digest(), b.digest());
    }
}

#[test]
fn honest_claims_verify_on_their_own_source() {
    let cfg = common::small_config();
    for scheme in SchemeKind::ALL {
        let (honest, _) = accuser_claim(world(), scheme, &cfg).unwrap();
        let v = resolve_alone(&honest.claim, &honest.model, &honest.model);
        assert!(v.checks.commitment, "{scheme}: commitment");
        assert!(v.checks.source_score, "{scheme}: source check, score {}", v.morr_acc_source);
        assert!(
            honest.claim.trigger.x.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "{scheme}: trigger outside the box"
        );
    }
}

#[test]
fn perturbation_schemes_respect_their_bound() {
    let cfg = common::small_config();
    let data = world().data.accuser_data.features();
    let (lib, _) = accuser_claim(world(), SchemeKind::Lib, &cfg).unwrap();
    assert!(distance_to_data(&lib.claim.trigger.x, data) <= cfg.lib_epsilon);
    let (luk, _) = accuser_claim(world(), SchemeKind::Lukas, &cfg).unwrap();
    let eps = lukas::decode_aux(&luk.claim.aux).unwrap();
    assert!(distance_to_data(&luk.claim.trigger.x, data) <= eps);
}

#[test]
fn forged_claims_pass_the_protocol_checks() {
    let cfg = common::small_config();
    for scheme in SchemeKind::ALL {
        let forged = forged_claim(world(), scheme, &cfg).unwrap();
        let v = resolve_alone(&forged.claim, &world().suspect, &world().source);
        assert!(v.checks.source_score, "{scheme}: source check, score {}", v.morr_acc_source);
        assert!(v.checks.commitment, "{scheme}: commitment");
        assert!(v.checks.timestamp, "{scheme}: timestamp");
    }
}

#[test]
fn resolution_is_a_pure_function() {
    let cfg = common::small_config();
    let forged = forged_claim(world(), SchemeKind::Adi, &cfg).unwrap();
    let a = resolve_alone(&forged.claim, &world().suspect, &world().source);
    let b = resolve_alone(&forged.claim, &world().suspect, &world().source);
    assert_eq!(a, b);
}

#[test]
fn every_ifgsm_step_stays_in_ball_and_box() {
    let w = world();
    let x = w.data.accuser_data.features().select_rows(&(0..10).collect::<Vec<_>>());
    let y = &w.data.accuser_data.labels()[..10];
    let refs = w.ensemble_refs();
    let objective = Objective::ensemble(&w.source, &refs, None).unwrap();
    let cfg = AttackConfig {
        epsilon: 0.1,
        alpha: 0.037,
        iterations: 1,
        ..AttackConfig::default()
    };
    let mut current = x.clone();
    for _ in 0..10 {
        current = ifgsm(&x, y, &objective, &cfg, StepDirection::Maximize, Some(&current))
            .unwrap()
            .x_hat;
        assert!(current.linf_distance(&x) <= cfg.epsilon);
        assert!(current.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn pgd_at_zero_epsilon_is_plain_training() {
    let ds = gen_blobs(2, 3, 5, 30, 0.1).unwrap();
    let cfg = TrainConfig {
        hidden: vec![8],
        epochs: 4,
        ..TrainConfig::default()
    };
    let pgd = PgdConfig {
        epochs: cfg.epochs,
        ..PgdConfig::new(0.0)
    };
    assert_eq!(
        adversarial_train_pgd(&ds, &cfg, &pgd).unwrap().digest(),
        train(&ds, &cfg).unwrap().digest()
    );
}

fn agreement(a: &MlpClassifier, b: &MlpClassifier, x: &Tensor) -> f64 {
    let (pa, pb) = (a.predict(x).unwrap(), b.predict(x).unwrap());
    pa.iter().zip(&pb).filter(|(u, v)| u == v).count() as f64 / pa.len() as f64
}

#[test]
fn extraction_agrees_with_its_source_at_least_as_much_as_independents_agree() {
    let ds = gen_blobs(5, 5, 10, 100, 0.15).unwrap();
    let split = split_disjoint(&ds, [0.45, 0.45, 0.10], 1).unwrap();
    let cfg = |seed, hidden: Vec<usize>| TrainConfig {
        hidden,
        epochs: 10,
        seed,
        ..TrainConfig::default()
    };
    let source = train(&split.part_a, &cfg(1, vec![32, 32])).unwrap();
    let other = train(&split.part_b, &cfg(2, vec![48, 24])).unwrap();
    let copy = extract_ftal(&source, split.part_b.features(), &TrainConfig::extraction(3)).unwrap();
    let holdout = split.holdout.features();
    assert!(agreement(&copy, &source, holdout) >= agreement(&other, &source, holdout));
}

#[test]
fn dataset_inference_detects_an_overfit_source() {
    let ds = gen_blobs(22, 10, 20, 200, 0.5).unwrap();
    let split = split_disjoint(&ds, [0.5, 0.25, 0.25], 2).unwrap();
    let cfg = |seed, hidden: Vec<usize>| TrainConfig {
        hidden,
        epochs: 300,
        l2_penalty: 0.0,
        seed,
        ..TrainConfig::default()
    };
    let members = split.part_a.subset(&(0..500).collect::<Vec<_>>());
    let source = train(&members, &cfg(1, vec![64, 64])).unwrap();
    let independent = train(&split.part_b, &cfg(2, vec![64, 64])).unwrap();
    let claim = di_claim(&source, &members, &split.holdout, 40, 40, 3, &DiConfig::default(), "accuser").unwrap();
    let source_effect = di_effect(&source, &claim).unwrap();
    let independent_effect = di_effect(&independent, &claim).unwrap();
    assert!(source_effect >= 0.6, "source effect {source_effect}");
    assert!(source_effect > independent_effect);
}

#[test]
fn report_csv_round_trips() {
    let cfg = common::small_config();
    let records = run_world(&cfg, world()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    save_records(&path, &records).unwrap();
    assert_eq!(load_records(&path).unwrap(), records);

    let report = Report::from_records(&records).unwrap();
    let back = Report::from_csv(&report.to_csv().unwrap()).unwrap();
    assert_eq!(back, report);
    assert!(report.mean(SchemeKind::Adi, Case::Forged).is_some());
    assert!(Report::from_records(&[]).is_err());

    let mut mixed = records[0].clone();
    mixed.thresholds.scheme = SchemeKind::Dawn;
    assert!(Report::from_records(&[mixed]).is_err());
}
