//! End-to-end checks of the command-line interface: exit codes, output
//! byte-stability, and the simulate -> fit round trip.

use std::fs;
use std::path::Path;
use std::process::Command;

fn npiv() -> Command {
    Command::new(env!("CARGO_BIN_EXE_npiv"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

const MINNORM_SMALL: &str = r#"
[scenario]
kind = "discrete"
builtin = "reference"

[experiment]
sizes = [200, 800]
replicates = 3
seed = 5
"#;

#[test]
fn missing_instance_file_exits_1_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write(
        &cfg,
        r#"
[scenario]
kind = "discrete"
instance = "no-such-instance.txt"

[experiment]
sizes = [100, 200]
replicates = 1
"#,
    );
    let out = npiv()
        .args(["minnorm", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("no-such-instance.txt"),
        "stderr must name the missing file: {stderr}"
    );
}

#[test]
fn malformed_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.toml");
    write(&cfg, "[scenario\nkind = discrete");
    let out = npiv().args(["rates", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn csv_outputs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mn.toml");
    write(&cfg, MINNORM_SMALL);
    let run = |out_dir: &Path| {
        let status = npiv()
            .args(["minnorm", "--config"])
            .arg(&cfg)
            .arg("--output-dir")
            .arg(out_dir)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out_dir.join("minnorm.csv")).unwrap()
    };
    let a = run(&dir.path().join("run-a"));
    let b = run(&dir.path().join("run-b"));
    assert_eq!(a, b, "identical config+seed must produce identical bytes");
    let summary = fs::read_to_string(dir.path().join("run-a/summary.json")).unwrap();
    assert!(summary.contains("\"study\": \"minnorm\""));
    let manifest = fs::read_to_string(dir.path().join("run-a/manifest.toml")).unwrap();
    assert!(manifest.contains("subcommand = \"minnorm\""));
    assert!(manifest.contains("seed = 5"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mn.toml");
    write(&cfg, MINNORM_SMALL);
    let run = |out_dir: &Path, seed: &str| {
        let status = npiv()
            .args(["minnorm", "--config"])
            .arg(&cfg)
            .args(["--seed", seed])
            .arg("--output-dir")
            .arg(out_dir)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out_dir.join("minnorm.csv")).unwrap()
    };
    let a = run(&dir.path().join("s5"), "5");
    let b = run(&dir.path().join("s6"), "6");
    assert_ne!(a, b, "different seeds must change the draws");
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("demo.toml");
    write(
        &cfg,
        r#"
[scenario]
kind = "continuous_demo"
confounding_strength = 1.0
m = 200
n = 200

[kernels.z]
family = "gaussian"
lengthscale = 0.8

[kernels.x]
family = "gaussian"
lengthscale = 0.25

[filter]
variant = "tikhonov"

[fit]
dataset = "dataset.csv"
xi = 0.05
lambda = 0.01

[experiment]
seed = 3
"#,
    );
    let out_dir = dir.path().join("out");
    let status = npiv()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let dataset = fs::read_to_string(out_dir.join("dataset.csv")).unwrap();
    assert!(dataset.starts_with("split,z0,x0,y\n"));
    assert_eq!(dataset.lines().count(), 1 + 200 + 200);

    // Point the fit at the simulated dataset.
    let fit_cfg = dir.path().join("fit.toml");
    write(
        &fit_cfg,
        &format!(
            r#"
[kernels.z]
family = "gaussian"
lengthscale = 0.8

[kernels.x]
family = "gaussian"
lengthscale = 0.25

[filter]
variant = "tikhonov"

[fit]
dataset = "{}"
xi = 0.05
lambda = 0.01
grid = [0.1, 0.9, 20]
"#,
            out_dir.join("dataset.csv").display()
        ),
    );
    let fit_out = dir.path().join("fit-out");
    let out = npiv()
        .args(["fit", "--config"])
        .arg(&fit_cfg)
        .arg("--output-dir")
        .arg(&fit_out)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "fit failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let preds = fs::read_to_string(fit_out.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("x,prediction\n"));
    assert_eq!(preds.lines().count(), 21);
    for line in preds.lines().skip(1) {
        let (_, p) = line.split_once(',').unwrap();
        let v: f64 = p.parse().unwrap();
        assert!(v.is_finite());
    }
}

#[test]
fn filters_check_and_theory_succeed() {
    let out = npiv().arg("filters-check").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("tikhonov"));
    assert!(stdout.contains("gradient_flow"));

    let out = npiv()
        .args([
            "theory", "--beta-x", "1", "--p-x", "1", "--gamma0", "1", "--gamma1", "1", "--a", "3",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("case A.i"), "{stdout}");
    assert!(stdout.contains("0.5"), "{stdout}");
}

#[test]
fn repo_config_files_load() {
    // The pinned configuration files shipped in configs/ must stay valid.
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in ["rates.toml", "minnorm.toml", "saturation.toml", "demo.toml"] {
        let path = root.join("configs").join(name);
        let text = fs::read_to_string(&path).unwrap();
        let parsed: std::result::Result<npiv::cli_io::RunConfig, _> = toml::from_str(&text);
        assert!(parsed.is_ok(), "{name} failed to parse: {:?}", parsed.err());
    }
    let inst = npiv::instance_io::read_instance_file(&root.join("configs/reference.instance"));
    assert!(inst.is_ok());
}
