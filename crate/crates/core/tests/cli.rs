//! Drives the `csifuse` binary through generate → train → evaluate, the
//! sweep and the self-test on a few dozen desk-profile positions.

use std::path::Path;
use std::process::{Command, Output};

fn csifuse(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_csifuse"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "csifuse {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scenario(dir: &Path) -> String {
    let path = dir.join("scenario.conf");
    std::fs::write(&path, "profile = desk\nenv.scatterers_max = 10\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = write_scenario(dir.path());
    let exp = p("exp.conf");
    std::fs::write(&exp, "epochs = 2\nstrategies = early, late-equal, late-mcd:5, late-de\n").unwrap();

    csifuse(&["generate", "--config", &cfg, "--seed", "3", "--positions", "80", "--out", &p("data.csif")]);
    csifuse(&["train", "--dataset", &p("data.csif"), "--seed", "2", "--config", &exp, "--out", &p("models")]);
    for f in ["bs1.clfm", "bs4.clfm", "early4.clfm"] {
        assert!(dir.path().join("models").join(f).exists(), "{f} missing");
    }
    let out = csifuse(&[
        "evaluate",
        "--dataset",
        &p("data.csif"),
        "--models",
        &p("models"),
        "--seed",
        "2",
        "--config",
        &exp,
        "--scenario",
        "dynamic",
        "--diagnostics",
        &p("diag.csv"),
        "--out",
        &p("report.csv"),
    ]);
    let csv = std::fs::read_to_string(p("report.csv")).unwrap();
    assert!(csv.starts_with("scenario,strategy,n_bs,seed,mean_error_m\n"));
    // four single-station rows plus four strategies at N_B = 4
    assert_eq!(csv.lines().count(), 1 + 4 + 4);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("dynamic,")));
    assert!(String::from_utf8_lossy(&out.stdout).contains("late-mcd"));
    assert!(dir.path().join("report_dynamic.svg").exists());
    let diag = std::fs::read_to_string(p("diag.csv")).unwrap();
    assert!(diag.lines().count() > 1);

    // evaluating twice gives the same report
    let again = p("again.csv");
    csifuse(&[
        "evaluate", "--dataset", &p("data.csif"), "--models", &p("models"), "--seed", "2", "--config", &exp,
        "--scenario", "dynamic", "--out", &again,
    ]);
    assert_eq!(std::fs::read_to_string(again).unwrap(), csv);
}

#[test]
fn sweep_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = write_scenario(dir.path());
    csifuse(&["generate", "--config", &cfg, "--positions", "60", "--out", &p("data.csif")]);
    csifuse(&[
        "sweep", "--dataset", &p("data.csif"), "--epochs", "1", "--scenario", "static", "--strategy", "late-equal",
        "--strategy", "late-de", "--out", &p("sweep.csv"),
    ]);
    let csv = std::fs::read_to_string(p("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.contains(",late-equal,")).count(), 4);
    assert_eq!(rows.iter().filter(|r| r.contains(",late-de,")).count(), 2);
    let svg = std::fs::read_to_string(p("sweep_static.svg")).unwrap();
    assert!(svg.contains("data-strategy=\"late-de\""));
}

#[test]
fn selftest_passes() {
    let out = csifuse(&["selftest"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.csif");
    std::fs::write(&bogus, b"not a dataset").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_csifuse"))
        .args(["train", "--dataset", bogus.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
