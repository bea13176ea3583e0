//! Serialized artifacts and reports. Every file is written atomically
//! (temporary file, then rename) and contains no wall-clock data, so
//! identical inputs give byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::activespace::LocalizationReport;
use crate::embedding::{ChainRuleDiagnostics, HeffDocument, Scheme};
use crate::error::Result;
use crate::fci::{DominantConfig, ExcitationLabel};
use crate::meanfield::MeanFieldMode;
use crate::model::ModelDiagnostics;
use crate::pipeline::{
    InvariantCheck, OracleCheck, PipelineConfig, RankErrorRow, RankRow, ReferenceRun, RunOutcome, SensitivityRow,
    SizeRow, ThresholdRow,
};
use crate::selfenergy::QpOutcome;
use crate::HARTREE_TO_EV;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub scheme: Scheme,
    pub state: usize,
    pub energy_hartree: f64,
    pub excitation_ev: f64,
    pub s_squared: f64,
    pub multiplicity: String,
    pub promotion: String,
    pub ghost: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpRow {
    pub orbital: usize,
    pub ks_energy_ev: f64,
    pub qp_energy_ev: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub state: usize,
    pub edc_ev: Option<f64>,
    pub edc_multiplicity: Option<String>,
    pub hfdc_ev: Option<f64>,
    pub hfdc_multiplicity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateReport {
    pub state: usize,
    pub energy_hartree: f64,
    pub excitation_ev: f64,
    pub s_squared: f64,
    pub multiplicity: String,
    pub dominant: Vec<DominantConfig>,
    pub label: Option<ExcitationLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub n_active_elec: usize,
    pub t_dc: Vec<Vec<f64>>,
    pub t_eff: Vec<Vec<f64>>,
    pub states: Vec<StateReport>,
    pub chain_rule: Option<ChainRuleDiagnostics>,
    pub ghost_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceReport {
    pub mode: MeanFieldMode,
    pub total_energy: f64,
    pub orbital_energies: Vec<f64>,
    pub fermi_level: f64,
    pub homo: usize,
    pub active_orbitals: Vec<usize>,
    pub screening_modes_kept: usize,
    pub screening_modes_total: usize,
    pub qp: Vec<QpOutcome>,
    pub localization: Option<LocalizationReport>,
    pub schemes: Vec<SchemeReport>,
    pub offdiag_coupling: Option<f64>,
    pub pole_proximity_warnings: usize,
    pub provenance: BTreeMap<String, String>,
}

/// Machine-readable run report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub model: ModelDiagnostics,
    pub primary: ReferenceReport,
    pub secondary: Option<ReferenceReport>,
    pub oracle: Option<OracleCheck>,
    pub oracle_exact: bool,
    pub sensitivity: Vec<SensitivityRow>,
    pub invariants: Vec<InvariantCheck>,
    pub passed: bool,
    pub notes: Vec<String>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn reference_report(run: &ReferenceRun) -> ReferenceReport {
    let sol = &run.gw.sol;
    ReferenceReport {
        mode: run.mode,
        total_energy: sol.total_energy,
        orbital_energies: sol.energies.iter().cloned().collect(),
        fermi_level: sol.fermi_level,
        homo: sol.homo(),
        active_orbitals: run.active.indices().to_vec(),
        screening_modes_kept: run.rank,
        screening_modes_total: run.total_modes,
        qp: run.gw.qp.outcomes.clone(),
        localization: run.localization.clone(),
        schemes: run
            .schemes
            .iter()
            .map(|s| SchemeReport {
                scheme: s.scheme,
                n_active_elec: s.heff.n_active_elec,
                t_dc: rows(&s.t_dc),
                t_eff: rows(&s.heff.t_eff),
                states: s
                    .spectrum
                    .iter()
                    .flat_map(|spec| spec.states.iter())
                    .map(|st| StateReport {
                        state: st.index,
                        energy_hartree: st.energy,
                        excitation_ev: st.excitation_ev,
                        s_squared: st.s_squared,
                        multiplicity: st.multiplicity.clone(),
                        dominant: st.dominant.clone(),
                        label: s.labels.get(st.index).cloned(),
                    })
                    .collect(),
                chain_rule: s.chain_rule.clone(),
                ghost_states: s.labels.iter().filter(|l| l.ghost).map(|l| l.state).collect(),
            })
            .collect(),
        offdiag_coupling: run.offdiag,
        pole_proximity_warnings: run.gw.pole_warnings(),
        provenance: run.hashes.iter().cloned().collect(),
    }
}

pub fn run_report(outcome: &RunOutcome) -> RunReport {
    let mut notes = vec![
        "energies in Hartree unless the field name ends in _ev (3 decimals in report.txt)".to_string(),
        "static self-energy matrices, including the double-counting self-energy, are symmetrized at the quasiparticle energies".to_string(),
        "chain-rule self-energy residual compares an independent embedded G0W0 calculation with the double-counting self-energy".to_string(),
    ];
    if outcome.primary.gw.pole_warnings() > 0 {
        notes.push("some self-energy evaluations were within 10 eta of a pole".into());
    }
    RunReport {
        config: outcome.config.clone(),
        model: outcome.diagnostics.clone(),
        primary: reference_report(&outcome.primary),
        secondary: outcome.secondary.as_ref().map(reference_report),
        oracle_exact: outcome.oracle.as_ref().is_some_and(|o| o.exact),
        oracle: outcome.oracle.clone(),
        sensitivity: outcome.sensitivity.clone(),
        invariants: outcome.invariants.clone(),
        passed: outcome.passed(),
        notes,
    }
}

pub fn spectrum_rows(run: &ReferenceRun, scheme: Scheme) -> Vec<SpectrumRow> {
    let Some(s) = run.scheme(scheme) else { return Vec::new() };
    let Some(spec) = &s.spectrum else { return Vec::new() };
    spec.states
        .iter()
        .map(|st| {
            let label = s.labels.get(st.index);
            SpectrumRow {
                scheme,
                state: st.index,
                energy_hartree: st.energy,
                excitation_ev: st.excitation_ev,
                s_squared: st.s_squared,
                multiplicity: st.multiplicity.clone(),
                promotion: label.map(|l| l.promotion.clone()).unwrap_or_default(),
                ghost: label.is_some_and(|l| l.ghost),
            }
        })
        .collect()
}

pub fn comparison_rows(run: &ReferenceRun) -> Vec<ComparisonRow> {
    let get = |s: Scheme| run.scheme(s).and_then(|r| r.spectrum.as_ref());
    let (edc, hfdc) = (get(Scheme::Edc), get(Scheme::Hfdc));
    let n = edc.map_or(0, |s| s.states.len()).max(hfdc.map_or(0, |s| s.states.len()));
    (1..n)
        .map(|i| ComparisonRow {
            state: i,
            edc_ev: edc.and_then(|s| s.states.get(i)).map(|s| s.excitation_ev),
            edc_multiplicity: edc.and_then(|s| s.states.get(i)).map(|s| s.multiplicity.clone()),
            hfdc_ev: hfdc.and_then(|s| s.states.get(i)).map(|s| s.excitation_ev),
            hfdc_multiplicity: hfdc.and_then(|s| s.states.get(i)).map(|s| s.multiplicity.clone()),
        })
        .collect()
}

pub fn qp_rows(run: &ReferenceRun) -> Vec<QpRow> {
    run.gw
        .qp
        .outcomes
        .iter()
        .map(|o| QpRow {
            orbital: o.orbital,
            ks_energy_ev: o.ks_energy * HARTREE_TO_EV,
            qp_energy_ev: o.energy * HARTREE_TO_EV,
            iterations: o.iterations,
            converged: o.converged,
            active: run.active.contains(o.orbital),
        })
        .collect()
}

fn ev3(x: f64) -> String {
    format!("{x:.3}")
}

/// Human-readable summary (Table-style layout, eV to 3 decimals).
pub fn render_text(report: &RunReport, outcome: &RunOutcome) -> String {
    let mut s = String::new();
    let p = &outcome.primary;
    let _ = writeln!(s, "QDET run report");
    let _ = writeln!(s, "reference: {}", p.mode);
    let _ = writeln!(s, "orbitals: {}  electrons: {}", outcome.model.n_orb, outcome.model.n_elec);
    let _ = writeln!(s, "active space: {} ({} orbitals)", p.active, p.active.len());
    let _ = writeln!(s, "screening modes: {} of {}", p.rank, p.total_modes);
    if let Some(o) = &outcome.oracle {
        let _ = writeln!(
            s,
            "full-space oracle: max deviation {:.3e} Ha over {} states{}",
            o.max_deviation_hartree,
            o.states_compared,
            if o.exact { " [oracle-exact]" } else { "" }
        );
    }
    let _ = writeln!(s, "\nVertical excitation energies (eV)");
    let _ = writeln!(s, "{:>6} {:>12} {:>10} {:>12} {:>10}", "state", "QDET (EDC)", "", "QDET (HFDC)", "");
    for r in comparison_rows(p) {
        let cell = |e: Option<f64>, m: Option<String>| {
            (
                e.map(ev3).unwrap_or_else(|| "-".into()),
                m.unwrap_or_else(|| "-".into()),
            )
        };
        let (a, am) = cell(r.edc_ev, r.edc_multiplicity);
        let (b, bm) = cell(r.hfdc_ev, r.hfdc_multiplicity);
        let _ = writeln!(s, "{:>6} {:>12} {:>10} {:>12} {:>10}", r.state, a, am, b, bm);
    }
    let _ = writeln!(s, "\nQuasiparticle energies (eV)");
    let _ = writeln!(s, "{:>7} {:>10} {:>10} {:>6}", "orbital", "KS", "QP", "active");
    for r in qp_rows(p) {
        let _ = writeln!(
            s,
            "{:>7} {:>10} {:>10} {:>6}{}",
            r.orbital,
            ev3(r.ks_energy_ev),
            ev3(r.qp_energy_ev),
            if r.active { "yes" } else { "" },
            if r.converged { "" } else { "  (not converged)" }
        );
    }
    let _ = writeln!(s, "\nDiagnostics");
    for sch in &p.schemes {
        if let Some(c) = &sch.chain_rule {
            let _ = writeln!(
                s,
                "chain rule {}: polarizability {:.3e}, self-energy {:.3e}",
                sch.scheme, c.polarizability_residual, c.sigma_residual
            );
        }
        let ghosts: Vec<String> = sch.labels.iter().filter(|l| l.ghost).map(|l| l.state.to_string()).collect();
        let _ = writeln!(
            s,
            "ghost states {}: {}",
            sch.scheme,
            if ghosts.is_empty() { "none".into() } else { ghosts.join(", ") }
        );
    }
    if let Some(x) = p.offdiag {
        let _ = writeln!(s, "active/environment self-energy coupling: {x:.3e} Ha");
    }
    if !outcome.sensitivity.is_empty() {
        let _ = writeln!(s, "\nReference sensitivity |E(Hartree-Fock) - E(Hartree)| (eV)");
        let _ = writeln!(s, "{:>6} {:>6} {:>10} {:>10} {:>10}", "scheme", "state", "HF ref", "H ref", "spread");
        for r in &outcome.sensitivity {
            let _ = writeln!(
                s,
                "{:>6} {:>6} {:>10} {:>10} {:>10}",
                r.scheme.to_string(),
                r.state,
                ev3(r.hartree_fock_ev),
                ev3(r.hartree_ev),
                ev3(r.spread_ev)
            );
        }
        for scheme in [Scheme::Edc, Scheme::Hfdc] {
            let spreads: Vec<f64> = outcome
                .sensitivity
                .iter()
                .filter(|r| r.scheme == scheme)
                .map(|r| r.spread_ev)
                .collect();
            if !spreads.is_empty() {
                let max = spreads.iter().cloned().fold(0.0, f64::max);
                let mean = spreads.iter().sum::<f64>() / spreads.len() as f64;
                let _ = writeln!(s, "{scheme}: max spread {}, mean spread {}", ev3(max), ev3(mean));
            }
        }
    }
    let _ = writeln!(s, "\nInvariants");
    for c in &report.invariants {
        let _ = writeln!(
            s,
            "{:<36} {:>12.3e} (tol {:.1e}) {}",
            c.name,
            c.value,
            c.tolerance,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    for n in &report.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

/// Writes every artifact of a run into `dir`; returns the report.
pub fn write_run_outputs(outcome: &RunOutcome, dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(dir)?;
    let report = run_report(outcome);
    let p = &outcome.primary;
    write_atomic(&dir.join("config.resolved.toml"), outcome.config.to_toml()?.as_bytes())?;
    write_json(&dir.join("model.json"), &outcome.model.to_document())?;
    write_csv(&dir.join("qp.csv"), &qp_rows(p))?;
    if let Some(l) = &p.localization {
        write_csv(&dir.join("localization.csv"), &l.entries)?;
    }
    let mut all_rows = Vec::new();
    for s in &p.schemes {
        let tag = s.scheme.to_string().to_lowercase();
        write_json(&dir.join(format!("heff_{tag}.json")), &s.heff.to_document())?;
        let rows = spectrum_rows(p, s.scheme);
        if !rows.is_empty() {
            write_csv(&dir.join(format!("spectrum_{tag}.csv")), &rows)?;
        }
        all_rows.extend(rows);
    }
    if p.schemes.iter().any(|s| s.spectrum.is_some()) {
        write_csv(&dir.join("excitations.csv"), &comparison_rows(p))?;
    }
    if !outcome.sensitivity.is_empty() {
        write_csv(&dir.join("sensitivity.csv"), &outcome.sensitivity)?;
    }
    write_json(&dir.join("report.json"), &report)?;
    write_atomic(&dir.join("report.txt"), render_text(&report, outcome).as_bytes())?;
    Ok(report)
}

pub fn write_heff(dir: &Path, docs: &[HeffDocument]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for d in docs {
        let path = dir.join(format!("heff_{}.json", d.scheme.to_string().to_lowercase()));
        write_json(&path, d)?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_threshold_sweep(dir: &Path, rows: &[ThresholdRow]) -> Result<()> {
    write_csv(&dir.join("sweep_threshold.csv"), rows)
}

pub fn write_rank_sweep(dir: &Path, rows: &[RankRow], errors: &[RankErrorRow]) -> Result<()> {
    write_csv(&dir.join("sweep_rank.csv"), rows)?;
    write_csv(&dir.join("rank_error.csv"), errors)
}

pub fn write_size_sweep(dir: &Path, rows: &[SizeRow]) -> Result<()> {
    write_csv(&dir.join("sweep_size.csv"), rows)
}
