use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gme(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gme"))
        .args(args)
        .current_dir(dir)
        .env_remove("GME_SEED")
        .output()
        .expect("gme runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const FAST: &[&str] = &[
    "--restarts",
    "8",
    "--screening",
    "5000",
    "--shots",
    "2000",
    "--mc-iterations",
    "10",
    "--roof-starts",
    "4",
];

#[test]
fn settings_counts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "id.json", r#"{"type":"scaled_identity","c":1}"#);
    write(
        dir.path(),
        "ghz.json",
        r#"{"type":"pure_projector","state":"GHZ","x":1}"#,
    );
    write(
        dir.path(),
        "mix.json",
        r#"{"type":"two_projector_mix","state1":"Bisep","state2":"W","x":1,"y":1}"#,
    );

    let out = gme(&["settings", "--operator", "id.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["minimal_settings"], 0);

    let out = gme(&["settings", "--operator", "ghz.json"], dir.path());
    let v = stdout_json(&out);
    assert_eq!(v["minimal_settings"], 5);
    assert_eq!(v["support_size"], 7);

    let out = gme(&["settings", "--operator", "mix.json"], dir.path());
    let v = stdout_json(&out);
    assert_eq!(v["minimal_settings"], 7);
    assert_eq!(v["settings"].as_array().unwrap().len(), 7);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.json", r#"{"type":"pure_projector","x":1}"#);
    write(dir.path(), "garbage.json", "not json");
    let cases: &[&[&str]] = &[
        &["settings", "--operator", "bad.json"],
        &["settings", "--operator", "garbage.json"],
        &["settings", "--operator", "missing.json"],
        &["calibrate", "--measure", "fill", "--operator", "bad.json"],
        &["calibrate", "--measure", "negativity", "--operator", "bad.json"],
        &["reproduce", "pure", "--state", "psi9", "--out", "x.csv"],
        &["reproduce", "mixed", "--grid", "0.5,1.5", "--out", "x.csv"],
        &["roof", "--state", "garbage.json", "--measure", "gmc"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = gme(args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn trivial_calibrations() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "zero.json", r#"{"type":"scaled_identity","c":0}"#);
    write(dir.path(), "one.json", r#"{"type":"scaled_identity","c":1}"#);
    let fast = ["--restarts", "8", "--screening", "20000"];

    let out = gme(
        &[
            &["calibrate", "--measure", "fill", "--operator", "zero.json"][..],
            &fast,
        ]
        .concat(),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!(v["lambda_lb"].as_f64().unwrap().abs() < 1e-6);
    assert!((v["lambda_ub"].as_f64().unwrap() + 1.0).abs() < 1e-6);

    let out = gme(
        &[
            &[
                "calibrate",
                "--measure",
                "gmc",
                "--operator",
                "one.json",
                "--out",
                "cal.json",
            ][..],
            &fast,
        ]
        .concat(),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("cal.json")).unwrap()).unwrap();
    assert!((v["lambda_lb"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(v["lambda_ub"].as_f64().unwrap().abs() < 1e-6);
    let m: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cal.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "calibrate");
    assert_eq!(m["config"]["restarts"], 8);
}

#[test]
fn roof_of_w() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "w.json", r#""W""#);
    write(dir.path(), "bisep.json", r#"{"mixture_p":0.0}"#);
    let out = gme(
        &["roof", "--state", "w.json", "--measure", "fill", "--starts", "4"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!((stdout_json(&out)["value"].as_f64().unwrap() - 8.0 / 9.0).abs() < 1e-9);
    let out = gme(
        &["roof", "--state", "bisep.json", "--measure", "gmc", "--starts", "4"],
        dir.path(),
    );
    assert!(stdout_json(&out)["value"].as_f64().unwrap() < 1e-9);
}

fn run_mixed(dir: &Path, extra: &[&str], seed: Option<&str>) -> (Option<i32>, Vec<u8>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gme"));
    cmd.args([
        "reproduce",
        "mixed",
        "--grid",
        "0,1",
        "--measure",
        "gmc",
        "--out",
        "m.csv",
    ])
    .args(FAST)
    .args(extra)
    .current_dir(dir)
    .env_remove("GME_SEED");
    if let Some(s) = seed {
        cmd.env("GME_SEED", s);
    }
    let out = cmd.output().unwrap();
    (out.status.code(), std::fs::read(dir.join("m.csv")).unwrap())
}

#[test]
fn reproduce_mixed_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (code_a, csv_a) = run_mixed(a.path(), &[], None);
    let (code_b, csv_b) = run_mixed(b.path(), &[], None);
    assert!(matches!(code_a, Some(0 | 3)), "{code_a:?}");
    assert_eq!(code_a, code_b);
    assert_eq!(csv_a, csv_b);

    let text = String::from_utf8(csv_a.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p,measure,lb_A1,ub_A1,lb_A2,ub_A2,E_oracle"));
    assert_eq!(lines.count(), 2);
    assert!(!text.contains('\r'));

    // The manifest alone reproduces the run, and records the output digest.
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("m.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    std::fs::copy(a.path().join("m.csv.manifest.json"), b.path().join("run.json")).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gme"));
    cmd.args([
        "reproduce",
        "mixed",
        "--grid",
        "0,1",
        "--measure",
        "gmc",
        "--out",
        "again.csv",
    ])
    .args(["--config", "run.json"])
    .current_dir(b.path())
    .env_remove("GME_SEED");
    cmd.output().unwrap();
    assert_eq!(std::fs::read(b.path().join("again.csv")).unwrap(), csv_a);

    // The environment seed overrides the manifest's.
    let (_, csv_seeded) = run_mixed(b.path(), &["--config", "run.json"], Some("99"));
    assert_ne!(csv_seeded, csv_a);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(b.path().join("m.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 99);
}
