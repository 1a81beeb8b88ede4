use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riesz-lab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn read_report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SPHERE: &str = "[shape.s]\ntype = sphere\ncenter = 0,0,0\nradius = 1\n";

#[test]
fn capacity_report_and_side_file() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cap.cfg",
        &format!("command = capacity\n[run]\ncsv = true\n{SPHERE}"),
    );
    let out = lab(
        &["--config", "cap.cfg", "--output", "out/cap.json"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = read_report(&dir.path().join("out/cap.json"));
    assert_eq!(r["schema"], 1);
    assert_eq!(r["command"], "capacity");
    let c = r["results"]["capacity"].as_f64().unwrap();
    assert!((c - 1.0).abs() < 0.02, "{c}");
    let checks = r["invariant_checks"].as_array().unwrap();
    assert!(checks
        .iter()
        .any(|c| c["name"] == "mass_energy_agreement" && c["passed"] == true));
    let csv = fs::read_to_string(dir.path().join("out/cap.equilibrium.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,x3,weight,r_eff"));
    assert_eq!(csv.lines().count(), 501);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("PASS mass_energy_agreement"));
}

#[test]
fn malformed_config_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "bad.cfg",
        "command = capacity\n[run]\nresolution = many\n",
    );
    let out = lab(&["--config", "bad.cfg", "--output", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:3:"));
    let err: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["error"]["kind"], "parse");
    assert_eq!(err["error"]["line"], 3);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn module_error_is_structured() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "mc.cfg",
        &format!("command = mc-hit\n[kernel]\nalpha = 1.5\n[params]\ny = 2,0,0\n{SPHERE}"),
    );
    let out = lab(
        &["--config", "mc.cfg", "--output", "r.json", "--quiet"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["command"], "mc-hit");
    assert_eq!(err["error"]["kind"], "unsupported");
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn failed_check_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cap.cfg",
        &format!("command = capacity\n[params]\nexpected = 2\n{SPHERE}"),
    );
    let out = lab(
        &[
            "--config",
            "cap.cfg",
            "--output",
            "r.json",
            "--resolution",
            "200",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let r = read_report(&dir.path().join("r.json"));
    let failed: Vec<&Value> = r["invariant_checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["name"], "capacity_vs_expected");
}

#[test]
fn example_ex_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "ex.cfg", "command = example-ex\n");
    let out = lab(&["--config", "ex.cfg", "--quiet"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let verdicts: Vec<(u64, String)> = r["results"]["bodies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| {
            (
                b["family"].as_u64().unwrap(),
                b["verdict"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    for (family, v) in verdicts {
        let want = ["", "not_thin", "thin_not_ultrathin", "ultrathin"][family as usize];
        assert_eq!(v, want);
    }
}

fn strip_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time");
    v
}

#[test]
fn seeded_runs_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "mc.cfg",
        &format!(
            "command = mc-hit\n[params]\ny = 2,0,0\nwalkers = 5000\ncompare = false\n{SPHERE}"
        ),
    );
    let a = lab(
        &["--config", "mc.cfg", "--seed", "17", "--quiet"],
        dir.path(),
    );
    let b = lab(
        &["--config", "mc.cfg", "--seed", "17", "--quiet"],
        dir.path(),
    );
    let c = lab(
        &["--config", "mc.cfg", "--seed", "18", "--quiet"],
        dir.path(),
    );
    let parse = |o: &Output| strip_time(serde_json::from_slice(&o.stdout).unwrap());
    let (ra, rb, rc) = (parse(&a), parse(&b), parse(&c));
    assert_eq!(ra, rb);
    assert_ne!(ra["inputs_digest"], rc["inputs_digest"]);
    assert_ne!(ra["results"], rc["results"]);
}

#[test]
fn kernel_overrides_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cap.cfg",
        &format!("command = capacity\n{SPHERE}"),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_riesz-lab"))
        .args([
            "--config",
            "cap.cfg",
            "--alpha",
            "1.5",
            "--resolution",
            "150",
            "--quiet",
        ])
        .env("RIESZ_LAB_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    // uniform measure on the sphere has constant potential ∫₀² t^{-3/2}·t/2 dt = √2
    let c = r["results"]["capacity"].as_f64().unwrap();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.02, "{c}");

    let out = Command::new(env!("CARGO_BIN_EXE_riesz-lab"))
        .args(["--config", "cap.cfg"])
        .env("RIESZ_LAB_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = lab(&["--config", "cap.cfg", "--dim", "4"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_configs_run_clean() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "cfg") {
            continue;
        }
        seen += 1;
        riesz_core::config::ExperimentConfig::from_file(&path).unwrap();
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        if stem.starts_with("continuity") || stem.starts_with("harmonic") {
            continue;
        }
        let out = dir.path().join(format!("{stem}.json"));
        let o = lab(
            &[
                "--config",
                path.to_str().unwrap(),
                "--output",
                out.to_str().unwrap(),
                "--quiet",
            ],
            dir.path(),
        );
        assert!(
            o.status.success(),
            "{stem}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
        assert_eq!(read_report(&out)["schema"], 1);
    }
    assert_eq!(seen, 13);
}
