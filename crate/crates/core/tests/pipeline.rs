mod common;

use std::path::Path;

use qdet::embedding::Scheme;
use qdet::output;
use qdet::pipeline::{self, ArtifactCache, PipelineConfig};
use qdet::HARTREE_TO_EV;

const SMALL: &str = r#"
[model.lattice]
shape = "chain"
sites = 4
hopping = 0.15
staggered_onsite = 0.4

[model.interaction]
onsite_u = 0.25
offsite_v = 0.05

[model.defect]
sites = [1, 2]
onsite_energy = 0.0
onsite_u = 0.3
hopping = 0.06

[model.electrons]
count = 4

[embedding]
threshold = 0.3
chain_rule_nodes = 256

[sweep]
thresholds = [0.5, 0.1, 1e-6]
"#;

fn small() -> PipelineConfig {
    PipelineConfig::from_toml(SMALL).unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn identical_config_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let outcome = pipeline::run(&small(), None).unwrap();
        assert!(outcome.passed());
        output::write_run_outputs(&outcome, d.path()).unwrap();
    }
    let (x, y) = (read_dir_sorted(a.path()), read_dir_sorted(b.path()));
    assert!(x.iter().any(|(n, _)| n == "report.json"));
    assert!(x.iter().any(|(n, _)| n == "sensitivity.csv"));
    assert_eq!(x, y);
}

#[test]
fn cached_artifacts_reproduce_downstream_results() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ArtifactCache::new(dir.path().join("cache"));
    let cold = pipeline::run(&small(), Some(&cache)).unwrap();
    assert!(dir.path().join("cache/meanfield-hartree-fock.json").exists());
    assert!(dir.path().join("cache/screening-hartree-fock.json").exists());
    let warm = pipeline::run(&small(), Some(&cache)).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    output::write_run_outputs(&cold, a.path()).unwrap();
    output::write_run_outputs(&warm, b.path()).unwrap();
    assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()));
}

#[test]
fn stale_cache_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ArtifactCache::new(dir.path());
    let first = pipeline::run(&small(), Some(&cache)).unwrap();
    let mut cfg = small();
    cfg.model.interaction.onsite_u = 0.2;
    let changed = pipeline::run(&cfg, Some(&cache)).unwrap();
    let fresh = pipeline::run(&cfg, None).unwrap();
    assert_ne!(first.primary.gw.sol.energies, changed.primary.gw.sol.energies);
    assert_eq!(changed.primary.gw.sol.energies, fresh.primary.gw.sol.energies);
}

#[test]
fn non_interacting_excitations_are_orbital_gaps() {
    let mut cfg = small();
    cfg.model.interaction.onsite_u = 0.0;
    cfg.model.interaction.offsite_v = 0.0;
    cfg.model.defect.as_mut().unwrap().onsite_u = 0.0;
    let outcome = pipeline::run(&cfg, None).unwrap();
    assert!(outcome.passed());
    let run = &outcome.primary;
    let sol = &run.gw.sol;
    let gap = (sol.energies[sol.homo() + 1] - sol.energies[sol.homo()]) * HARTREE_TO_EV;
    assert_eq!(run.active.indices(), &[sol.homo(), sol.homo() + 1]);
    for s in &run.schemes {
        let d = s.chain_rule.as_ref().unwrap();
        // Both sides are evaluated independently; they agree to rounding.
        assert!(d.polarizability_residual < 1e-14);
        assert_eq!(d.sigma_residual, 0.0);
        let spec = s.spectrum.as_ref().unwrap();
        assert!((spec.states[1].excitation_ev - gap).abs() < 1e-9);
    }
}

#[test]
fn full_active_space_is_oracle_exact() {
    let mut cfg = small();
    cfg.embedding.orbitals = Some(vec![0, 1, 2, 3]);
    cfg.embedding.compare_references = false;
    cfg.fci.n_states = 8;
    let outcome = pipeline::run(&cfg, None).unwrap();
    let oracle = outcome.oracle.clone().unwrap();
    assert!(oracle.exact, "deviation {:e}", oracle.max_deviation_hartree);
    assert_eq!(oracle.states_compared, 8);
    let report = output::run_report(&outcome);
    assert!(report.oracle_exact);
    assert!(output::render_text(&report, &outcome).contains("[oracle-exact]"));
}

#[test]
fn both_schemes_reported_side_by_side() {
    let outcome = pipeline::run(&small(), None).unwrap();
    let rows = output::comparison_rows(&outcome.primary);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.edc_ev.is_some() && r.hfdc_ev.is_some()));
    let text = output::render_text(&output::run_report(&outcome), &outcome);
    assert!(text.contains("QDET (EDC)") && text.contains("QDET (HFDC)"));
}

#[test]
fn rank_sweep_ends_at_the_full_run() {
    let cfg = small();
    let (rows, errors) = pipeline::sweep_ranks(&cfg, &[], None).unwrap();
    let last = errors.last().unwrap();
    assert_eq!(last.error, 0.0);
    assert_eq!(last.max_excitation_deviation_ev, 0.0);
    for w in errors.windows(2) {
        assert!(w[1].error <= w[0].error);
    }
    let full = pipeline::run(&cfg, None).unwrap();
    let edc = full.primary.scheme(Scheme::Edc).unwrap().spectrum.as_ref().unwrap();
    for r in rows.iter().filter(|r| r.rank == last.rank && r.scheme == Scheme::Edc) {
        assert_eq!(r.excitation_ev, edc.states[r.state].excitation_ev);
    }
}

#[test]
fn threshold_sweep_audits_nesting() {
    let cfg = small();
    let rows = pipeline::sweep_thresholds(&cfg, &cfg.sweep.thresholds, None).unwrap();
    assert!(rows.iter().all(|r| r.nested));
    let sizes: Vec<usize> = cfg
        .sweep
        .thresholds
        .iter()
        .map(|t| rows.iter().find(|r| r.threshold == *t).unwrap().n_active)
        .collect();
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*sizes.last().unwrap(), 4);
}

#[test]
fn size_sweep_has_one_block_per_size() {
    let rows = pipeline::sweep_sizes(&small(), &[4, 6]).unwrap();
    for n in [4, 6] {
        assert!(rows.iter().any(|r| r.sites == n));
    }
    let dir = tempfile::tempdir().unwrap();
    output::write_size_sweep(dir.path(), &rows).unwrap();
    let text = std::fs::read_to_string(dir.path().join("sweep_size.csv")).unwrap();
    assert!(text.starts_with("sites,"));
}

#[test]
fn demo_config_loads_and_validates() {
    let cfg = PipelineConfig::load(&common::demo_config_path()).unwrap();
    let (_, diag) = pipeline::build_checked_model(&cfg).unwrap();
    assert!(diag.passes());
    assert_eq!(cfg.sweep.sizes, vec![4, 6, 8]);
}
