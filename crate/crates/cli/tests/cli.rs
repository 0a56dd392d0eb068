//! End-to-end runs of the `critfield` binary and the library entry point.

use std::path::Path;
use std::process::Command;

use critfield_cli::{run, ExperimentConfig};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_critfield");

const DIFFEO_IDENTITY: &str = r#"
[experiment]
kind = "verify-diffeo"
replicates = 5
seed = 11

[model]
covariance = "squared-exponential"
length_scale = 1.0
dim = 2
waves = 128

[domain]
kind = "box"
lower = [0.0, 0.0]
upper = [6.0, 6.0]

[map]
kind = "identity"

[thresholds]
u = [-inf, 0.0, 1.0]
"#;

const ORACLE_1D: &str = r#"
[experiment]
kind = "oracle-compare"
replicates = 50
seed = 5

[model]
covariance = "squared-exponential"
length_scale = 1.0
dim = 1
waves = 256

[domain]
kind = "torus"
period = 40.0

[thresholds]
u = [-inf, inf]

[oracle]
samples = 20000
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn critfield(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn identity_diffeo_passes_with_equal_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", DIFFEO_IDENTITY);
    let out = tmp.path().join("out");
    let res = critfield(&["verify-diffeo", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_report(&out);
    assert_eq!(report["verdict"], "PASS");
    assert_eq!(report["seed"], 11);
    assert_eq!(report["accepted"], 5);
    let diff = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "max_count_difference").unwrap();
    assert_eq!(diff["observed"], 0.0);
    for name in ["counts.csv", "heights.csv", "catalog_x.csv", "catalog_z.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert!(text.lines().count() > 1, "{name} is empty");
    }
    // Counts of both fields agree row by row.
    let counts = std::fs::read_to_string(out.join("counts.csv")).unwrap();
    let rows: Vec<Vec<&str>> = counts.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for x in rows.iter().filter(|r| r[2] == "X") {
        let z = rows.iter().find(|r| r[2] == "Z" && r[0] == x[0] && r[3] == x[3] && r[4] == x[4]).unwrap();
        assert_eq!(x[5], z[5]);
    }
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", DIFFEO_IDENTITY);
    let out = tmp.path().join("out");
    let res = critfield(&[
        "verify-diffeo",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "99",
        "--replicates",
        "2",
        "--mode",
        "independent",
        "--threads",
        "2",
    ]);
    assert!(res.status.code() == Some(0) || res.status.code() == Some(1));
    let report = read_report(&out);
    assert_eq!(report["seed"], 99);
    assert_eq!(report["replicates"], 2);
    assert_eq!(report["mode"], "independent");
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", DIFFEO_IDENTITY);
    let dirs: Vec<_> = ["1", "3"]
        .iter()
        .map(|threads| {
            let out = tmp.path().join(format!("out{threads}"));
            let res = critfield(&[
                "verify-diffeo",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ]);
            assert_eq!(res.status.code(), Some(0));
            out
        })
        .collect();
    for name in ["report.json", "counts.csv", "heights.csv", "catalog_x.csv", "catalog_z.csv"] {
        let a = std::fs::read(dirs[0].join(name)).unwrap();
        let b = std::fs::read(dirs[1].join(name)).unwrap();
        assert!(a == b, "{name} differs between thread counts");
    }
}

#[test]
fn singular_map_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = DIFFEO_IDENTITY.replace("kind = \"identity\"", "kind = \"linear\"\nmatrix = [[1.0, 2.0], [2.0, 4.0]]");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = tmp.path().join("out");
    let res = critfield(&["verify-diffeo", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists(), "nothing is written before validation");

    // A sine warp whose Jacobian vanishes somewhere in the box.
    let text = DIFFEO_IDENTITY.replace(
        "kind = \"identity\"",
        "kind = \"sine-warp\"\namplitude = 2.0\nterms = [{ frequency = [1.0, 0.0], direction = [1.0, 0.0] }]",
    );
    let cfg = write_config(tmp.path(), "warp.toml", &text);
    let res = critfield(&["verify-diffeo", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn zero_semi_axis_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[experiment]
kind = "manifold"
replicates = 2
seed = 1

[model]
covariance = "squared-exponential"
length_scale = 1.0
dim = 3
waves = 64

[manifold]
semi_axes = [2.0, 0.0, 1.0]
"#;
    let cfg = write_config(tmp.path(), "c.toml", text);
    let res = critfield(&["manifold", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn subcommand_must_match_config_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", DIFFEO_IDENTITY);
    let res = critfield(&["manifold", "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let res = critfield(&["simulate", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn standard_errors_shrink_with_replicates() {
    let small = ExperimentConfig::from_toml(ORACLE_1D).unwrap();
    let mut large = small.clone();
    large.experiment.replicates = 200;
    let se = |c: &ExperimentConfig| -> f64 {
        let out = run(c).unwrap();
        let agg = &out.report.aggregates;
        let a = agg.iter().find(|a| a.index == 0 && a.u == "-inf").unwrap();
        a.std_error
    };
    let factor = se(&small) / se(&large);
    assert!((1.6..=2.5).contains(&factor), "standard error shrank by {factor}");
}

#[test]
fn infinite_threshold_counts_nothing() {
    let config = ExperimentConfig::from_toml(ORACLE_1D).unwrap();
    let out = run(&config).unwrap();
    for a in out.report.aggregates.iter().filter(|a| a.u == "inf") {
        assert_eq!(a.mean, 0.0);
    }
    let checks = &out.report.checks;
    assert!(checks.iter().filter(|c| c.name.contains("u=inf")).all(|c| c.pass && c.observed == 0.0));
}

#[test]
fn identity_aniso_estimates_coincide() {
    let text = r#"
[experiment]
kind = "verify-aniso"
replicates = 8
seed = 3

[model]
covariance = "squared-exponential"
length_scale = 1.0
dim = 2
waves = 128

[domain]
kind = "box"
lower = [0.0, 0.0]
upper = [6.0, 6.0]

[map]
kind = "identity"

[oracle]
samples = 20000
"#;
    let config = ExperimentConfig::from_toml(text).unwrap();
    let out = run(&config).unwrap();
    let checks = &out.report.checks;
    for c in checks.iter().filter(|c| c.name.starts_with("x_vs_scaled_z")) {
        assert_eq!(c.observed, c.expected);
    }
    let ratio = checks.iter().find(|c| c.name == "total_count_ratio").unwrap();
    assert_eq!(ratio.observed, 1.0);
}

#[test]
fn self_consistent_heights() {
    // Independent isotropic arms: the identity map makes both arms the same law.
    let text = r#"
[experiment]
kind = "height-dist"
replicates = 8
seed = 17
mode = "independent"

[model]
covariance = "squared-exponential"
length_scale = 1.0
dim = 2
waves = 128

[domain]
kind = "box"
lower = [0.0, 0.0]
upper = [16.0, 16.0]

[map]
kind = "identity"

[thresholds]
u = [0.0]

[oracle]
height_samples = 20000
"#;
    let config = ExperimentConfig::from_toml(text).unwrap();
    let out = run(&config).unwrap();
    let ks: Vec<_> = out.report.checks.iter().filter(|c| c.name.starts_with("ks_x_vs_z")).collect();
    assert!(!ks.is_empty());
    for c in ks {
        assert!(c.pass, "{c:?}");
    }
    assert!(out.file("survival.csv").is_some());
}

#[test]
fn simulate_writes_field_and_torus_topology() {
    let text = r#"
[experiment]
kind = "simulate"
replicates = 4
seed = 8

[model]
covariance = "band-limited"
length_scale = 0.8
dim = 2
waves = 128

[domain]
kind = "torus"
period = 6.0
"#;
    let config = ExperimentConfig::from_toml(text).unwrap();
    let out = run(&config).unwrap();
    assert!(out.report.verdict.is_pass());
    let field = critfield::field::SpectralField::from_text(out.file("field_0.txt").unwrap()).unwrap();
    assert_eq!(field.torus_period(), Some(6.0));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = ExperimentConfig::load(&path).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            n += 1;
        }
    }
    assert!(n >= 6);
}
