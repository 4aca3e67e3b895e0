//! Command-line harness for the arena. Commands compose through files under
//! `--out`:
//!
//! ```text
//! data/            gen-data     pool CSVs and world.json
//! models/          train        every party's model (.mlpc)
//! thresholds/      calibrate    <scheme>.json
//! claims/          claim, forge <scheme>-honest.moc, <scheme>-forged.moc
//! ledger.jsonl     claim, forge timestamped commitments
//! verdicts/        resolve, screen
//! defense.json     defend
//! records.jsonl    e2e          one JSON record per evaluated case
//! report.txt/.csv  report
//! ```

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use morarena::arena::{self, ArenaConfig, Calibration, Case, Report, World, WorldData};
use morarena::models::MlpClassifier;
use morarena::protocol::claim::{OwnershipClaim, SchemeKind};
use morarena::protocol::ledger::Ledger;
use morarena::protocol::resolve::{resolve, Suspect};
use morarena::protocol::thresholds::ThresholdKind;
use morarena::{defense, protocol};
use serde_json::json;

/// Environment variable overriding the configured base seed.
const SEED_ENV: &str = "MORARENA_SEED";

#[derive(Parser)]
#[command(name = "morarena", version, about = "Model ownership resolution arena")]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long, global = true, value_enum)]
    threshold: Option<ThresholdArg>,
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Attacker's perturbation bound.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Attacker's transfer ensemble size.
    #[arg(long, global = true)]
    ensemble: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample every party's data pools.
    GenData,
    /// Train every party's models on the generated data.
    Train,
    /// Calibrate the judge's thresholds for a scheme.
    Calibrate,
    /// Make the accuser's honest claim and a thief's extracted copy.
    Claim,
    /// Forge a claim against the independent suspect.
    Forge,
    /// Resolve a claim against a suspect.
    Resolve {
        #[arg(long, value_enum, default_value = "forged")]
        claim: ClaimArg,
        #[arg(long, value_enum, default_value = "independent")]
        suspect: SuspectArg,
    },
    /// Screen a claim's trigger set with the judge's holdout models.
    Screen {
        #[arg(long, value_enum, default_value = "forged")]
        claim: ClaimArg,
    },
    /// Harden the suspect and score Adi forgeries against it.
    Defend,
    /// Seed-averaged tables from a records file.
    Report {
        /// Records to report on; defaults to `<out>/records.jsonl`.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Run the full pipeline on every seed and append the records.
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Adi,
    Ewe,
    Lib,
    Dawn,
    Lukas,
    Di,
}

impl From<SchemeArg> for SchemeKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Adi => SchemeKind::Adi,
            SchemeArg::Ewe => SchemeKind::Ewe,
            SchemeArg::Lib => SchemeKind::Lib,
            SchemeArg::Dawn => SchemeKind::Dawn,
            SchemeArg::Lukas => SchemeKind::Lukas,
            SchemeArg::Di => SchemeKind::Di,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdArg {
    Independent,
    Mixed,
    Extracted,
}

impl From<ThresholdArg> for ThresholdKind {
    fn from(t: ThresholdArg) -> Self {
        match t {
            ThresholdArg::Independent => ThresholdKind::Independent,
            ThresholdArg::Mixed => ThresholdKind::Mixed,
            ThresholdArg::Extracted => ThresholdKind::Extracted,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClaimArg {
    Honest,
    Forged,
}

impl ClaimArg {
    fn name(self) -> &'static str {
        match self {
            ClaimArg::Honest => "honest",
            ClaimArg::Forged => "forged",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuspectArg {
    /// The independently trained suspect.
    Independent,
    /// The thief's extracted copy of the accuser's model.
    Stolen,
}

impl SuspectArg {
    fn name(self) -> &'static str {
        match self {
            SuspectArg::Independent => "independent",
            SuspectArg::Stolen => "stolen",
        }
    }
}

/// Artifact locations under the output directory.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    fn model(&self, name: &str) -> PathBuf {
        self.models().join(format!("{name}.mlpc"))
    }
    fn thresholds(&self, scheme: SchemeKind) -> PathBuf {
        self.root.join("thresholds").join(format!("{scheme}.json"))
    }
    fn claim(&self, scheme: SchemeKind, which: ClaimArg) -> PathBuf {
        self.root.join("claims").join(format!("{scheme}-{}.moc", which.name()))
    }
    fn ledger(&self) -> PathBuf {
        self.root.join("ledger.jsonl")
    }
    fn verdict(&self, name: &str) -> PathBuf {
        self.root.join("verdicts").join(format!("{name}.json"))
    }
    fn records(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", &e.to_string(), None);
            return ExitCode::from(1);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, path, code) = classify(&e);
            // arena errors already carry their source in their message
            let message = match e.chain().find_map(|c| c.downcast_ref::<morarena::Error>()) {
                Some(inner) => inner.to_string(),
                None => format!("{e:#}"),
            };
            report_error(kind, &message, path);
            ExitCode::from(code)
        }
    }
}

/// Map an error to a kind, the file it concerns and an exit code: 1 for
/// failures caused by inputs, 2 for internal errors.
fn classify(e: &anyhow::Error) -> (&'static str, Option<PathBuf>, u8) {
    use morarena::Error;
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => {
            ("missing-artifact", Some(path.clone()), 1)
        }
        Some(Error::Io { path, .. }) => ("io", Some(path.clone()), 1),
        Some(Error::Parse { path, .. }) => ("parse", Some(path.clone()), 1),
        Some(Error::Malformed(_)) => ("malformed", None, 1),
        Some(Error::InvalidParameter(_)) => ("invalid-parameter", None, 1),
        Some(Error::DuplicateCommitment(_)) => ("duplicate-commitment", None, 1),
        Some(Error::ClaimGeneration(_) | Error::Unsatisfiable(_) | Error::EmptyTriggerSet) => {
            ("claim-generation", None, 1)
        }
        Some(_) => ("internal", None, 2),
        None if e.chain().any(|c| c.downcast_ref::<Usage>().is_some()) => ("usage", None, 1),
        None => ("internal", None, 2),
    }
}

fn report_error(kind: &str, message: &str, path: Option<PathBuf>) {
    let mut err = json!({ "kind": kind, "message": message });
    if let Some(p) = path {
        err["path"] = json!(p.display().to_string());
    }
    eprintln!("{}", json!({ "error": err }));
}

/// An invalid combination of flags.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn config(cli: &Cli) -> Result<ArenaConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ArenaConfig::load(path)?,
        None => ArenaConfig::default(),
    };
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.base_seed = seed
            .parse()
            .map_err(|_| Usage(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}")))?;
    }
    if let Some(s) = cli.scheme {
        cfg.schemes = vec![s.into()];
    }
    if let Some(t) = cli.threshold {
        cfg.threshold = t.into();
    }
    if let Some(n) = cli.seeds {
        cfg.seeds = n;
    }
    if let Some(e) = cli.epsilon {
        cfg.epsilon = e;
    }
    if let Some(n) = cli.ensemble {
        cfg.ensemble = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scheme(cli: &Cli) -> Result<SchemeKind> {
    Ok(cli
        .scheme
        .ok_or_else(|| Usage("this command needs --scheme".into()))?
        .into())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| morarena::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text).map_err(|e| morarena::Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?)
}

fn load_world(cfg: &ArenaConfig, layout: &Layout) -> Result<World> {
    let data = WorldData::load(&layout.data())?;
    Ok(World::load(cfg, data, &layout.models())?)
}

/// Add a claim's commitment to the ledger unless it is already there.
fn publish(layout: &Layout, claim: &OwnershipClaim) -> Result<u64> {
    let path = layout.ledger();
    let mut ledger = if path.exists() {
        Ledger::load_jsonl(&path)?
    } else {
        Ledger::new()
    };
    if let Some(ts) = ledger.lookup(&claim.commitment) {
        return Ok(ts);
    }
    let entry = protocol::publish(&mut ledger, claim)?;
    ledger.save_jsonl(&path)?;
    Ok(entry.ts)
}

fn save_claim(path: &Path, claim: &OwnershipClaim) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(claim.save(path)?)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let layout = Layout { root: cli.out.clone() };
    match &cli.command {
        Command::GenData => {
            let data = WorldData::generate(&cfg, cfg.base_seed)?;
            data.save(&layout.data())?;
            for (name, ds) in data.pools() {
                println!("{name}: {} samples", ds.len());
            }
        }
        Command::Train => {
            let data = WorldData::load(&layout.data())?;
            let world = World::train(&cfg, data)?;
            world.save_models(&layout.models())?;
            println!(
                "source clean accuracy {:.3}, suspect clean accuracy {:.3}",
                world.source.dataset_accuracy(&world.data.test)?,
                world.suspect.dataset_accuracy(&world.data.test)?
            );
        }
        Command::Calibrate => {
            let scheme = scheme(cli)?;
            let world = load_world(&cfg, &layout)?;
            let cal = arena::calibrate(&world, scheme, &cfg)?;
            write_json(&layout.thresholds(scheme), &cal)?;
            println!("{}", serde_json::to_string(&cal.thresholds)?);
        }
        Command::Claim => {
            let scheme = scheme(cli)?;
            let world = load_world(&cfg, &layout)?;
            let (honest, stolen) = arena::accuser_claim(&world, scheme, &cfg)?;
            honest.model.save(&layout.model(&format!("{scheme}-accuser")))?;
            stolen.save(&layout.model(&format!("{scheme}-stolen")))?;
            let path = layout.claim(scheme, ClaimArg::Honest);
            save_claim(&path, &honest.claim)?;
            let ts = publish(&layout, &honest.claim)?;
            println!(
                "{}",
                json!({
                    "claim": path.display().to_string(),
                    "commitment": hex::encode(honest.claim.commitment),
                    "timestamp": ts,
                    "trigger_size": honest.claim.trigger.len(),
                })
            );
        }
        Command::Forge => {
            let scheme = scheme(cli)?;
            let world = load_world(&cfg, &layout)?;
            let forged = arena::forged_claim(&world, scheme, &cfg)?;
            let path = layout.claim(scheme, ClaimArg::Forged);
            save_claim(&path, &forged.claim)?;
            let ts = publish(&layout, &forged.claim)?;
            println!(
                "{}",
                json!({
                    "claim": path.display().to_string(),
                    "commitment": hex::encode(forged.claim.commitment),
                    "timestamp": ts,
                    "stats": arena::ForgeStats::of(&forged)?,
                })
            );
        }
        Command::Resolve { claim, suspect } => {
            let scheme = scheme(cli)?;
            let cal: Calibration = read_json(&layout.thresholds(scheme))?;
            let moc = OwnershipClaim::load(&layout.claim(scheme, *claim))?;
            let source = match claim {
                ClaimArg::Honest => MlpClassifier::load(&layout.model(&format!("{scheme}-accuser")))?,
                ClaimArg::Forged => MlpClassifier::load(&layout.model("source"))?,
            };
            let model = match suspect {
                SuspectArg::Independent => MlpClassifier::load(&layout.model("suspect"))?,
                SuspectArg::Stolen => MlpClassifier::load(&layout.model(&format!("{scheme}-stolen")))?,
            };
            let ledger = Ledger::load_jsonl(&layout.ledger())?;
            let verdict = resolve(&moc, &Suspect::new(&model), &cal.thresholds, cfg.threshold, &ledger, &source)?;
            write_json(
                &layout.verdict(&format!("{scheme}-{}-{}", claim.name(), suspect.name())),
                &verdict,
            )?;
            println!("{}", serde_json::to_string(&verdict)?);
        }
        Command::Screen { claim } => {
            let scheme = scheme(cli)?;
            let cal: Calibration = read_json(&layout.thresholds(scheme))?;
            let moc = OwnershipClaim::load(&layout.claim(scheme, *claim))?;
            let holdouts = (0..cfg.screening_holdouts)
                .map(|k| MlpClassifier::load(&layout.model(&format!("holdout-{k}"))))
                .collect::<morarena::Result<Vec<_>>>()?;
            let policy = defense::ScreeningPolicy {
                holdout_independents: holdouts.iter().collect(),
                flag_threshold: cfg.flag_threshold,
            };
            let verdict = defense::screen_trigger_set(&moc, &policy, &cal.thresholds)?;
            write_json(&layout.verdict(&format!("{scheme}-{}-screen", claim.name())), &verdict)?;
            println!("{}", serde_json::to_string(&verdict)?);
        }
        Command::Defend => {
            if !(cfg.defense_epsilon > 0.0) {
                return Err(Usage("defend needs defense_epsilon > 0 in the config".into()).into());
            }
            let world = load_world(&cfg, &layout)?;
            let hardened = arena::hardened_suspect(&world, &cfg)?;
            hardened.save(&layout.model("hardened"))?;
            let score = |eps: f64, model: &MlpClassifier| -> Result<f64> {
                let f = arena::adi_forgery(&world, &cfg, eps, world.ensemble_refs())?;
                Ok(morarena::schemes::score(model, &f.claim)?)
            };
            let eps = cfg.defense_epsilon;
            let summary = json!({
                "defense_epsilon": eps,
                "undefended_score": score(eps, &world.suspect)?,
                "hardened_score": score(eps, &hardened)?,
                "hardened_score_double_epsilon": score(2.0 * eps, &hardened)?,
                "undefended_clean_accuracy": world.suspect.dataset_accuracy(&world.data.test)?,
                "hardened_clean_accuracy": hardened.dataset_accuracy(&world.data.test)?,
            });
            write_json(&layout.root.join("defense.json"), &summary)?;
            println!("{summary}");
        }
        Command::Report { records } => {
            let path = records.clone().unwrap_or_else(|| layout.records());
            let report = Report::from_records(&arena::load_records(&path)?)?;
            std::fs::create_dir_all(&layout.root).with_context(|| format!("creating {}", layout.root.display()))?;
            let text = report.to_text();
            std::fs::write(layout.root.join("report.txt"), &text).context("writing report.txt")?;
            std::fs::write(layout.root.join("report.csv"), report.to_csv()?).context("writing report.csv")?;
            print!("{text}");
        }
        Command::E2e => {
            let records = arena::run(&cfg)?;
            std::fs::create_dir_all(&layout.root).with_context(|| format!("creating {}", layout.root.display()))?;
            arena::save_records(&layout.records(), &records)?;
            print!("{}", Report::from_records(&records)?.to_text());
            println!("\nAttack success ({} threshold)", cfg.threshold.name());
            for &scheme in &cfg.schemes {
                let forged: Vec<_> = records
                    .iter()
                    .filter(|r| r.scheme == scheme && r.case == Case::Forged)
                    .collect();
                let accepted = forged.iter().filter(|r| r.verdict.accepted).count();
                println!("  {scheme}: {accepted}/{} seeds", forged.len());
            }
        }
    }
    Ok(())
}
