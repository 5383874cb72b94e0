use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dephasimeter"))
        .args(args)
        .env_remove("DEPHASIMETER_WORKERS")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_spec(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

const RATIO: &str =
    r#"{"command": "ratio-mc", "parameters": {"replications": 40, "nu": 500}, "seed": 5}"#;

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "r.json", RATIO);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        run(&["ratio-mc", "--spec", &spec, "--output", a.to_str().unwrap()]).0,
        0
    );
    assert_eq!(
        run(&[
            "ratio-mc",
            "--spec",
            &spec,
            "--output",
            b.to_str().unwrap(),
            "--workers",
            "1"
        ])
        .0,
        0
    );
    assert_eq!(
        fs::read(a.join("bias.csv")).unwrap(),
        fs::read(b.join("bias.csv")).unwrap()
    );
    let c = dir.path().join("c");
    assert_eq!(
        run(&[
            "ratio-mc",
            "--spec",
            &spec,
            "--output",
            c.to_str().unwrap(),
            "--seed",
            "6"
        ])
        .0,
        0
    );
    assert_ne!(
        fs::read(a.join("bias.csv")).unwrap(),
        fs::read(c.join("bias.csv")).unwrap()
    );
}

#[test]
fn manifest_echoes_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "r.json", RATIO);
    let out = dir.path().join("out");
    let (code, _) = run(&[
        "ratio-mc",
        "--spec",
        &spec,
        "--output",
        out.to_str().unwrap(),
        "--set",
        "n=4",
    ]);
    assert_eq!(code, 0);
    let m: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(m["config"]["parameters"]["n"], 4);
    assert_eq!(m["config"]["parameters"]["replications"], 40);
    assert_eq!(m["config"]["parameters"]["tau"], 1.0);
    for f in m["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists());
    }
    let csv = fs::read_to_string(out.join("bias.csv")).unwrap();
    assert!(csv.starts_with("estimator,b_true,"));
    assert!(!csv.contains('\r'));
    let leftovers = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(".tmp")
        })
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_field = write_spec(
        dir.path(),
        "a.json",
        r#"{"command": "kappa", "parameters": {"spectrum": {"kind": "flat", "s0": 1}, "tmax": 2}}"#,
    );
    let (code, err) = run(&["kappa", "--spec", &bad_field]);
    assert_eq!(code, 2);
    assert!(err.contains("parameters.tmax"), "{err}");
    let wrong_command = write_spec(dir.path(), "b.json", RATIO);
    assert_eq!(run(&["kappa", "--spec", &wrong_command]).0, 2);
    assert_eq!(
        run(&[
            "kappa",
            "--spec",
            dir.path().join("missing.json").to_str().unwrap()
        ])
        .0,
        2
    );
    assert_eq!(run(&["nonsense"]).0, 2);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn domain_errors_exit_with_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "k.json",
        r#"{"command": "kappa", "parameters": {"spectrum": {"kind": "flat", "s0": -1}}}"#,
    );
    let out = dir.path().join("out");
    let (code, err) = run(&["kappa", "--spec", &spec, "--output", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("error"));
    assert!(!out.exists());
}

#[test]
fn kappa_and_evolve_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let k = write_spec(
        dir.path(),
        "k.json",
        r#"{"command": "kappa", "parameters": {"spectrum": {"kind": "lorentzian", "g2": 1.0, "gamma_c": 2.0}, "times": [0.0, 0.5]}}"#,
    );
    let out = dir.path().join("k");
    assert_eq!(
        run(&["kappa", "--spec", &k, "--output", out.to_str().unwrap()]).0,
        0
    );
    let csv = fs::read_to_string(out.join("kappa.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let legend: Value =
        serde_json::from_str(&fs::read_to_string(out.join("kappa.columns.json")).unwrap()).unwrap();
    assert!(legend.get("kappa_dot").is_some());

    let e = write_spec(
        dir.path(),
        "e.json",
        r#"{"command": "evolve", "parameters": {"state": {"kind": {"kind": "phi"}, "n": 4}, "b": 0.2, "t": 1.0,
            "noise": {"mode": "noiseless"}}}"#,
    );
    let out = dir.path().join("e");
    assert_eq!(
        run(&["evolve", "--spec", &e, "--output", out.to_str().unwrap()]).0,
        0
    );
    let rho: Value =
        serde_json::from_str(&fs::read_to_string(out.join("rho.json")).unwrap()).unwrap();
    assert_eq!(rho["J"], 2.0);
}

#[test]
fn shipped_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut count = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        let cfg: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let out = dir.path().join(path.file_stem().unwrap());
        let (code, err) = run(&[
            cfg["command"].as_str().unwrap(),
            "--spec",
            path.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{}: {err}", path.display());
        assert!(out.join("manifest.json").exists());
        count += 1;
    }
    assert!(count >= 7);
}
