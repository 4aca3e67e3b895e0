use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.toml")
}

fn morarena(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morarena"))
        .arg("--config")
        .arg(fixture())
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("MORARENA_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = morarena(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str::<Value>(line).expect("machine-readable error")["error"].clone()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn e2e_equals_the_composed_commands() {
    let dir = tempfile::tempdir().unwrap();
    let steps = dir.path().join("steps");
    for args in [
        &["gen-data"][..],
        &["train"],
        &["calibrate", "--scheme", "adi"],
        &["claim", "--scheme", "adi"],
        &["forge", "--scheme", "adi"],
        &["resolve", "--scheme", "adi"],
        &["resolve", "--scheme", "adi", "--claim", "honest", "--suspect", "stolen"],
        &["resolve", "--scheme", "adi", "--claim", "honest", "--suspect", "independent"],
        &["screen", "--scheme", "adi"],
    ] {
        ok(&steps, args);
    }

    let e2e = dir.path().join("e2e");
    let summary = ok(&e2e, &["e2e", "--scheme", "adi", "--seeds", "1"]);
    assert!(summary.contains("Attack success (mixed threshold)"), "{summary}");
    let recs = records(&e2e.join("records.jsonl"));
    let case = |name: &str| recs.iter().find(|r| r["case"] == name).unwrap().clone();

    let cal = json(&steps.join("thresholds/adi.json"));
    assert_eq!(cal["thresholds"], case("forged")["thresholds"]);
    for (record, verdict) in [
        ("forged", "adi-forged-independent"),
        ("honest-stolen", "adi-honest-stolen"),
        ("honest-independent", "adi-honest-independent"),
    ] {
        let v = json(&steps.join(format!("verdicts/{verdict}.json")));
        assert_eq!(v, case(record)["verdict"], "{record}");
    }
    let screen = json(&steps.join("verdicts/adi-forged-screen.json"));
    assert_eq!(screen, case("forged")["screening"]);
}

#[test]
fn calibration_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["train"]);
    let first = ok(dir.path(), &["calibrate", "--scheme", "adi"]);
    let second = ok(dir.path(), &["calibrate", "--scheme", "adi"]);
    assert_eq!(first, second);
}

#[test]
fn e2e_appends_and_report_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["e2e", "--scheme", "adi", "--seeds", "2"]);
    let once = records(&dir.path().join("records.jsonl")).len();
    ok(dir.path(), &["e2e", "--scheme", "adi", "--seeds", "2"]);
    assert_eq!(records(&dir.path().join("records.jsonl")).len(), 2 * once);

    let text = ok(dir.path(), &["report"]);
    assert!(text.contains("Decision thresholds"));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.contains("exceeds_mixed") && header.contains("exceeds_extracted"), "{header}");
    assert!(csv.lines().any(|l| l.contains(",mean,")));
}

#[test]
fn missing_artifact_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = morarena(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_error(&o);
    assert_eq!(err["kind"], "missing-artifact");
    assert!(err["path"].as_str().unwrap().ends_with("world.json"), "{err}");

    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["train"]);
    let o = morarena(dir.path(), &["resolve", "--scheme", "ewe"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_error(&o)["path"].as_str().unwrap().ends_with("ewe.json"));
}

#[test]
fn report_rejects_empty_records() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("records.jsonl"), "").unwrap();
    let o = morarena(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["kind"], "invalid-parameter");
}

#[test]
fn usage_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let o = morarena(dir.path(), &["calibrate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["kind"], "usage");

    let o = morarena(dir.path(), &["forge", "--scheme", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["kind"], "usage");
}

#[test]
fn seed_variable_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_morarena"));
        cmd.arg("--config").arg(fixture()).arg("--out").arg(&out).arg("gen-data");
        match seed {
            Some(s) => cmd.env("MORARENA_SEED", s),
            None => cmd.env_remove("MORARENA_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        std::fs::read_to_string(out.join("data/accuser.csv")).unwrap()
    };
    assert_eq!(gen("a", None), gen("b", Some("0")));
    assert_ne!(gen("c", None), gen("d", Some("7")));
    assert_eq!(json(&dir.path().join("d/data/world.json"))["seed"], 7);
}
