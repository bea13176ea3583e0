use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[model.lattice]
shape = "chain"
sites = 4
hopping = 0.15
staggered_onsite = 0.4

[model.interaction]
onsite_u = 0.25

[model.defect]
sites = [1, 2]
onsite_energy = 0.0
onsite_u = 0.3
hopping = 0.06

[model.electrons]
count = 4

[embedding]
threshold = 0.3
chain_rule_nodes = 128

[sweep]
thresholds = [0.5, 1e-6]
ranks = [1, 2]
sizes = [4, 6]
"#;

fn qdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdet")).args(args).output().unwrap()
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, format!("{SMALL}{extra}")).unwrap();
    let out = dir.path().join("out").to_string_lossy().into_owned();
    (dir, cfg, out)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_report_and_succeeds() {
    let (_d, cfg, out) = setup("");
    let o = qdet(&["run", "--config", path(&cfg), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("QDET (EDC)") && stdout.contains("QDET (HFDC)"));
    for f in ["report.json", "report.txt", "excitations.csv", "heff_edc.json", "qp.csv", "config.resolved.toml"] {
        assert!(Path::new(&out).join(f).exists(), "missing {f}");
    }
    let resolved = std::fs::read_to_string(Path::new(&out).join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("quadrature_nodes"));
}

#[test]
fn flags_override_config() {
    let (_d, cfg, out) = setup("");
    let o = qdet(&["export-heff", "--config", path(&cfg), "--out", &out, "--scheme", "hfdc", "--threshold", "1e-6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!Path::new(&out).join("heff_edc.json").exists());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&out).join("heff_hfdc.json")).unwrap()).unwrap();
    assert_eq!(doc["active_orbitals"].as_array().unwrap().len(), 4);
}

#[test]
fn diagnose_prints_residuals() {
    let (_d, cfg, out) = setup("");
    let o = qdet(&["diagnose", "--config", path(&cfg), "--out", &out, "--ghosts"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("EDC chain-rule residual"));
    assert!(stdout.contains("HFDC ghost states"));
}

#[test]
fn sweep_writes_one_csv_per_axis() {
    let (_d, cfg, out) = setup("");
    let o = qdet(&["sweep", "--config", path(&cfg), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sweep_threshold.csv", "sweep_rank.csv", "rank_error.csv", "sweep_size.csv"] {
        assert!(Path::new(&out).join(f).exists(), "missing {f}");
    }
}

#[test]
fn validate_model_reports_ok() {
    let (_d, cfg, _) = setup("");
    let o = qdet(&["validate-model", "--config", path(&cfg)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("model ok"));
}

#[test]
fn invalid_input_exits_with_one() {
    let (_d, cfg, out) = setup("\n[greens]\neta = -1.0\n");
    assert_eq!(qdet(&["run", "--config", path(&cfg), "--out", &out]).status.code(), Some(1));
    let (_d, cfg, out) = setup("");
    let o = qdet(&["run", "--config", path(&cfg), "--out", &out, "--threshold", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(qdet(&["run", "--config", "/nonexistent.toml"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let (_d, cfg, out) = setup("\n[meanfield]\nmax_iter = 1\n");
    let o = qdet(&["run", "--config", path(&cfg), "--out", &out, "--no-cache"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("meanfield"));
}
