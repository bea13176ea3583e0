//! End-to-end driver: model → mean field → screening → self-energy →
//! embedding → FCI, plus diagnostics and sweeps.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activespace::{characters, localization_report, Character, LocalizationReport, DEFAULT_THRESHOLD};
use crate::embedding::{
    build_heff, chain_rule_residual, offdiag_coupling, safe_frequencies, t_dc, ChainRuleDiagnostics,
    EffectiveHamiltonian, GwReference, Scheme,
};
use crate::error::{QdetError, Result};
use crate::fci::{classify_excitations, fci_ground_sector, ExcitationLabel, FciOptions, FciSpectrum};
use crate::greens::{OrbitalSet, DEFAULT_ETA};
use crate::meanfield::{solve_scf, MeanFieldDocument, MeanFieldMode, MeanFieldSolution, ScfOptions};
use crate::model::{build_model, validate_model, ModelDiagnostics, ModelSpec, ModelSystem};
use crate::screening::{partially_screened_wr, reconstruction_error, rpa_modes, PoleRepresentation, WrMethod};
use crate::selfenergy::{QpOptions, QuadSpec};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Edc,
    Hfdc,
    Both,
}

impl SchemeChoice {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeChoice::Edc => vec![Scheme::Edc],
            SchemeChoice::Hfdc => vec![Scheme::Hfdc],
            SchemeChoice::Both => vec![Scheme::Edc, Scheme::Hfdc],
        }
    }
}

impl std::str::FromStr for SchemeChoice {
    type Err = QdetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edc" => Ok(SchemeChoice::Edc),
            "hfdc" => Ok(SchemeChoice::Hfdc),
            "both" => Ok(SchemeChoice::Both),
            other => Err(QdetError::Config(format!("unknown scheme `{other}` (edc, hfdc, both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanFieldConfig {
    pub mode: MeanFieldMode,
    pub max_iter: usize,
    pub tolerance: f64,
    pub mixing: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        let o = ScfOptions::default();
        MeanFieldConfig {
            mode: MeanFieldMode::HartreeFock,
            max_iter: o.max_iter,
            tolerance: o.tolerance,
            mixing: o.mixing,
        }
    }
}

impl MeanFieldConfig {
    pub fn options(&self) -> ScfOptions {
        ScfOptions {
            max_iter: self.max_iter,
            tolerance: self.tolerance,
            mixing: self.mixing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreensConfig {
    pub eta: f64,
}

impl Default for GreensConfig {
    fn default() -> Self {
        GreensConfig { eta: DEFAULT_ETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfEnergyConfig {
    pub quadrature_nodes: usize,
    pub qp_tolerance: f64,
    pub qp_damping: f64,
    pub qp_max_iter: usize,
}

impl Default for SelfEnergyConfig {
    fn default() -> Self {
        let q = QpOptions::default();
        SelfEnergyConfig {
            quadrature_nodes: QuadSpec::default().nodes,
            qp_tolerance: q.tolerance,
            qp_damping: q.damping,
            qp_max_iter: q.max_iter,
        }
    }
}

impl SelfEnergyConfig {
    pub fn qp_options(&self) -> QpOptions {
        QpOptions {
            tolerance: self.qp_tolerance,
            damping: self.qp_damping,
            max_iter: self.qp_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub scheme: SchemeChoice,
    pub threshold: f64,
    /// Explicit active orbitals (MO indices); overrides the threshold.
    pub orbitals: Option<Vec<usize>>,
    /// Sites of the localization region; defaults to the defect sites.
    pub region: Option<Vec<usize>>,
    /// Number of screening modes kept (0 = all).
    pub rank: usize,
    pub wr_method: WrMethod,
    /// Repeat the run on the other mean-field reference and tabulate the
    /// spread of excitation energies.
    pub compare_references: bool,
    /// Imaginary-axis nodes of the embedded G0W0 chain-rule check.
    pub chain_rule_nodes: usize,
    /// Number of real frequencies sampled by the chain-rule check.
    pub chain_rule_frequencies: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            scheme: SchemeChoice::Both,
            threshold: DEFAULT_THRESHOLD,
            orbitals: None,
            region: None,
            rank: 0,
            wr_method: WrMethod::Dyson,
            compare_references: true,
            chain_rule_nodes: 512,
            chain_rule_frequencies: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("qdet-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
    /// Ranks to sweep; empty means 1..=full.
    pub ranks: Vec<usize>,
    /// Chain lengths for the model-size sweep.
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub meanfield: MeanFieldConfig,
    #[serde(default)]
    pub greens: GreensConfig,
    #[serde(default)]
    pub selfenergy: SelfEnergyConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub fci: FciOptions,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Seed for randomized checks only; the pipeline is deterministic.
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| QdetError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QdetError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QdetError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QdetError::Config(msg));
        if !(self.greens.eta > 0.0) {
            return bad(format!("greens.eta must be positive, got {}", self.greens.eta));
        }
        let e = &self.embedding;
        if !(e.threshold > 0.0 && e.threshold <= 1.0) {
            return Err(QdetError::InvalidThreshold(e.threshold));
        }
        if let Some(o) = &e.orbitals {
            if o.is_empty() {
                return Err(QdetError::EmptyActiveSpace);
            }
        }
        if e.chain_rule_nodes == 0 || self.selfenergy.quadrature_nodes == 0 {
            return bad("quadrature node counts must be positive".into());
        }
        let m = &self.meanfield;
        if !(m.tolerance > 0.0) || !(m.mixing > 0.0 && m.mixing <= 1.0) || m.max_iter == 0 {
            return bad("meanfield needs tolerance > 0, mixing in (0, 1], max_iter > 0".into());
        }
        let s = &self.selfenergy;
        if !(s.qp_tolerance > 0.0) || !(s.qp_damping > 0.0 && s.qp_damping <= 1.0) || s.qp_max_iter == 0 {
            return bad("selfenergy needs qp_tolerance > 0, qp_damping in (0, 1], qp_max_iter > 0".into());
        }
        if self.fci.n_states == 0 {
            return bad("fci.n_states must be at least 1".into());
        }
        if self.sweep.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad("sweep thresholds must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn with_scheme(mut self, scheme: SchemeChoice) -> Self {
        self.embedding.scheme = scheme;
        self
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reuses serialized mean-field and screening artifacts whose input hash
/// matches.
#[derive(Debug, Clone)]
pub struct ArtifactCache {
    pub dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Cached<T> {
    input_hash: String,
    data: T,
}

impl ArtifactCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ArtifactCache { dir: dir.into() }
    }

    fn load<T: for<'de> Deserialize<'de>>(&self, name: &str, input_hash: &str) -> Option<T> {
        let text = std::fs::read_to_string(self.dir.join(name)).ok()?;
        let cached: Cached<T> = serde_json::from_str(&text).ok()?;
        (cached.input_hash == input_hash).then_some(cached.data)
    }

    fn store<T: Serialize>(&self, name: &str, input_hash: &str, data: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(&Cached {
            input_hash: input_hash.to_string(),
            data,
        })?;
        crate::output::write_atomic(&self.dir.join(name), text.as_bytes())
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Mean-field reference with its MO interaction and screening modes.
#[derive(Debug, Clone)]
pub struct Reference {
    pub sol: MeanFieldSolution,
    pub v_mo: Tensor4,
    pub poles: PoleRepresentation,
    pub hashes: Vec<(String, String)>,
}

pub fn prepare_reference(
    cfg: &PipelineConfig,
    model: &ModelSystem,
    mode: MeanFieldMode,
    cache: Option<&ArtifactCache>,
) -> Result<Reference> {
    let model_json = model.to_json()?;
    let model_hash = sha256_hex(model_json.as_bytes());
    let opts = cfg.meanfield.options();
    let mf_key = sha256_hex(format!("{model_hash}|{mode}|{}", serde_json::to_string(&opts)?).as_bytes());
    let mf_name = format!("meanfield-{mode}.json");
    let sol = match cache.and_then(|c| c.load::<MeanFieldDocument>(&mf_name, &mf_key)) {
        Some(doc) => {
            log::info!("reusing cached {mf_name}");
            stage("meanfield", MeanFieldSolution::from_document(&doc, model))?
        }
        None => {
            let sol = stage("meanfield", solve_scf(model, mode, &opts))?;
            if let Some(c) = cache {
                c.store(&mf_name, &mf_key, &sol.to_document())?;
            }
            sol
        }
    };
    let mf_hash = sha256_hex(serde_json::to_string(&sol.to_document())?.as_bytes());
    let v_mo = sol.mo_interaction(model);
    let scr_name = format!("screening-{mode}.json");
    let poles = match cache.and_then(|c| c.load::<PoleRepresentation>(&scr_name, &mf_hash)) {
        Some(p) => {
            log::info!("reusing cached {scr_name}");
            p
        }
        None => {
            let p = stage("screening", rpa_modes(&sol, &v_mo))?;
            if let Some(c) = cache {
                c.store(&scr_name, &mf_hash, &p)?;
            }
            p
        }
    };
    let scr_hash = sha256_hex(serde_json::to_string(&poles)?.as_bytes());
    Ok(Reference {
        sol,
        v_mo,
        poles,
        hashes: vec![
            ("model".into(), model_hash),
            ("meanfield".into(), mf_hash),
            ("screening".into(), scr_hash),
        ],
    })
}

/// Sites of the localization region: configured, else the defect sites.
pub fn region_sites(cfg: &PipelineConfig, model: &ModelSystem) -> Result<Vec<usize>> {
    match &cfg.embedding.region {
        Some(r) => Ok(r.clone()),
        None => {
            let d = model.defect_sites();
            if d.is_empty() {
                Err(QdetError::Config(
                    "no defect sites: give [embedding] region or orbitals".into(),
                ))
            } else {
                Ok(d)
            }
        }
    }
}

/// Active space from the explicit orbital list or the localization rule.
pub fn choose_active(
    cfg: &PipelineConfig,
    model: &ModelSystem,
    sol: &MeanFieldSolution,
    threshold: f64,
) -> Result<(OrbitalSet, Option<LocalizationReport>)> {
    let region = region_sites(cfg, model);
    let report = match &region {
        Ok(r) => Some(localization_report(sol, r, threshold)?),
        Err(_) => None,
    };
    match &cfg.embedding.orbitals {
        Some(o) => Ok((OrbitalSet::new(o.clone(), sol.n_orb())?, report)),
        None => {
            let report = report.ok_or_else(|| region.unwrap_err())?;
            Ok((report.selected()?, Some(report)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSelection {
    pub fci: bool,
    pub diagnostics: bool,
}

#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub heff: EffectiveHamiltonian,
    pub t_dc: DMatrix<f64>,
    pub spectrum: Option<FciSpectrum>,
    pub labels: Vec<ExcitationLabel>,
    pub chain_rule: Option<ChainRuleDiagnostics>,
}

#[derive(Debug)]
pub struct ReferenceRun {
    pub mode: MeanFieldMode,
    pub gw: GwReference,
    pub active: OrbitalSet,
    pub localization: Option<LocalizationReport>,
    pub characters: Vec<Character>,
    pub wr: Tensor4,
    pub schemes: Vec<SchemeResult>,
    pub offdiag: Option<f64>,
    pub hashes: Vec<(String, String)>,
    pub rank: usize,
    pub total_modes: usize,
}

impl ReferenceRun {
    pub fn scheme(&self, s: Scheme) -> Option<&SchemeResult> {
        self.schemes.iter().find(|r| r.scheme == s)
    }
}

/// Runs every stage after the reference for one mean-field mode.
pub fn run_reference(
    cfg: &PipelineConfig,
    model: &ModelSystem,
    reference: Reference,
    threshold: f64,
    rank: usize,
    stages: StageSelection,
) -> Result<ReferenceRun> {
    let Reference {
        sol,
        v_mo,
        poles,
        mut hashes,
    } = reference;
    let mode = sol.mode;
    let total_modes = poles.rank();
    let poles = if rank == 0 || rank == total_modes {
        poles
    } else {
        stage("screening", poles.truncate(rank))?
    };
    let kept = poles.rank();
    let (active, localization) = stage("activespace", choose_active(cfg, model, &sol, threshold))?;
    let gw = stage(
        "selfenergy",
        GwReference::new(sol, v_mo, poles, cfg.greens.eta, &cfg.selfenergy.qp_options()),
    )?;
    let wr = stage(
        "embedding",
        partially_screened_wr(&gw.sol, &gw.v_mo, &active, cfg.embedding.wr_method),
    )?;
    let chars = characters(&gw.sol, &defect_orbitals(&localization, &active));
    let active_chars: Vec<Character> = active.indices().iter().map(|&i| chars[i]).collect();
    let freqs = if stages.diagnostics {
        stage(
            "embedding",
            safe_frequencies(&gw, &active, cfg.embedding.chain_rule_frequencies),
        )?
    } else {
        Vec::new()
    };

    let mut schemes = Vec::new();
    for scheme in cfg.embedding.scheme.schemes() {
        let tdc = stage("embedding", t_dc(&gw, &wr, &active, scheme))?;
        let mut heff = stage("embedding", build_heff(&gw, &wr, &active, scheme))?;
        for (k, v) in &hashes {
            heff.provenance.insert(k.clone(), v.clone());
        }
        heff.provenance.insert("active".into(), active.to_string());
        heff.provenance.insert("rank".into(), kept.to_string());
        let (spectrum, labels) = if stages.fci {
            let spec = stage(
                "fci",
                fci_ground_sector(&heff.t_eff, &heff.v_eff, heff.n_active_elec, &cfg.fci),
            )?;
            let labels = classify_excitations(&spec, &active_chars);
            (Some(spec), labels)
        } else {
            (None, Vec::new())
        };
        let chain_rule = if stages.diagnostics {
            Some(stage(
                "embedding",
                chain_rule_residual(
                    &gw,
                    &wr,
                    &active,
                    scheme,
                    &freqs,
                    QuadSpec::with_nodes(cfg.embedding.chain_rule_nodes),
                ),
            )?)
        } else {
            None
        };
        schemes.push(SchemeResult {
            scheme,
            heff,
            t_dc: tdc,
            spectrum,
            labels,
            chain_rule,
        });
    }
    let offdiag = if stages.diagnostics {
        Some(stage("embedding", offdiag_coupling(&gw, &active))?)
    } else {
        None
    };
    hashes.push(("active".into(), active.to_string()));
    Ok(ReferenceRun {
        mode,
        gw,
        active,
        localization,
        characters: active_chars,
        wr,
        schemes,
        offdiag,
        hashes,
        rank: kept,
        total_modes,
    })
}

/// Orbitals tagged as defect: the localization selection when available,
/// otherwise the whole active space.
fn defect_orbitals(report: &Option<LocalizationReport>, active: &OrbitalSet) -> OrbitalSet {
    match report {
        Some(r) => r.selected().unwrap_or_else(|_| active.clone()),
        None => active.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl InvariantCheck {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        InvariantCheck {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub max_deviation_hartree: f64,
    pub states_compared: usize,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub scheme: Scheme,
    pub state: usize,
    pub hartree_fock_ev: f64,
    pub hartree_ev: f64,
    pub spread_ev: f64,
}

/// Everything computed by `run`.
#[derive(Debug)]
pub struct RunOutcome {
    pub config: PipelineConfig,
    pub model: ModelSystem,
    pub diagnostics: ModelDiagnostics,
    pub primary: ReferenceRun,
    pub secondary: Option<ReferenceRun>,
    pub oracle: Option<OracleCheck>,
    pub sensitivity: Vec<SensitivityRow>,
    pub invariants: Vec<InvariantCheck>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }
}

pub fn build_checked_model(cfg: &PipelineConfig) -> Result<(ModelSystem, ModelDiagnostics)> {
    let model = stage("model", build_model(&cfg.model))?;
    let diag = validate_model(&model);
    Ok((model, diag))
}

fn other_mode(mode: MeanFieldMode) -> MeanFieldMode {
    match mode {
        MeanFieldMode::Hartree => MeanFieldMode::HartreeFock,
        MeanFieldMode::HartreeFock => MeanFieldMode::Hartree,
    }
}

/// Exact FCI of the bare model in the same sector.
pub fn bare_spectrum(model: &ModelSystem, opts: &FciOptions) -> Result<FciSpectrum> {
    fci_ground_sector(&model.h_core, &model.v, model.n_elec, opts)
}

pub fn compare_spectra(a: &FciSpectrum, b: &FciSpectrum) -> (f64, usize) {
    let n = a.states.len().min(b.states.len());
    let dev = (0..n)
        .map(|i| (a.states[i].energy - b.states[i].energy).abs())
        .fold(0.0, f64::max);
    (dev, n)
}

fn sensitivity(primary: &ReferenceRun, secondary: &ReferenceRun) -> Vec<SensitivityRow> {
    let (hf, h) = match primary.mode {
        MeanFieldMode::HartreeFock => (primary, secondary),
        MeanFieldMode::Hartree => (secondary, primary),
    };
    let mut rows = Vec::new();
    for s in &hf.schemes {
        let (Some(a), Some(b)) = (&s.spectrum, h.scheme(s.scheme).and_then(|r| r.spectrum.as_ref())) else {
            continue;
        };
        for i in 1..a.states.len().min(b.states.len()) {
            let (x, y) = (a.states[i].excitation_ev, b.states[i].excitation_ev);
            rows.push(SensitivityRow {
                scheme: s.scheme,
                state: i,
                hartree_fock_ev: x,
                hartree_ev: y,
                spread_ev: (x - y).abs(),
            });
        }
    }
    rows
}

fn invariants(outcome_model: &ModelDiagnostics, run: &ReferenceRun, oracle: &Option<OracleCheck>) -> Vec<InvariantCheck> {
    let mut out = vec![InvariantCheck {
        name: "model.valid".into(),
        value: if outcome_model.passes() { 0.0 } else { 1.0 },
        tolerance: 0.0,
        passed: outcome_model.passes(),
    }];
    for s in &run.schemes {
        let tag = s.scheme.to_string().to_lowercase();
        let t = &s.heff.t_eff;
        out.push(InvariantCheck::at_most(
            format!("{tag}.t_eff_symmetry"),
            (t - t.transpose()).amax(),
            1e-10,
        ));
        if let Some(spec) = &s.spectrum {
            let worst = spec
                .states
                .iter()
                .map(|st| (st.s_squared - st.spin * (st.spin + 1.0)).abs())
                .fold(0.0, f64::max);
            out.push(InvariantCheck::at_most(format!("{tag}.spin_purity"), worst, 1e-6));
        }
        if let (Scheme::Edc, Some(c)) = (s.scheme, &s.chain_rule) {
            out.push(InvariantCheck::at_most("edc.chain_rule_polarizability", c.polarizability_residual, 1e-10));
            out.push(InvariantCheck::at_most("edc.chain_rule_self_energy", c.sigma_residual, 1e-8));
        }
    }
    if let Some(o) = oracle {
        out.push(InvariantCheck::at_most("edc.full_space_oracle", o.max_deviation_hartree, 1e-8));
    }
    out
}

fn execute(cfg: &PipelineConfig, cache: Option<&ArtifactCache>, stages: StageSelection) -> Result<RunOutcome> {
    cfg.validate()?;
    let (model, diag) = build_checked_model(cfg)?;
    let mode = cfg.meanfield.mode;
    let reference = prepare_reference(cfg, &model, mode, cache)?;
    let primary = run_reference(cfg, &model, reference, cfg.embedding.threshold, cfg.embedding.rank, stages)?;
    let secondary = if cfg.embedding.compare_references && stages.fci {
        let r = prepare_reference(cfg, &model, other_mode(mode), cache)?;
        Some(run_reference(cfg, &model, r, cfg.embedding.threshold, cfg.embedding.rank, stages)?)
    } else {
        None
    };
    let oracle = match (primary.active.is_full(), primary.scheme(Scheme::Edc)) {
        (true, Some(SchemeResult { spectrum: Some(spec), .. })) => {
            let bare = stage("fci", bare_spectrum(&model, &cfg.fci))?;
            let (dev, n) = compare_spectra(spec, &bare);
            Some(OracleCheck {
                max_deviation_hartree: dev,
                states_compared: n,
                exact: dev <= 1e-8,
            })
        }
        _ => None,
    };
    let sensitivity = secondary.as_ref().map(|s| sensitivity(&primary, s)).unwrap_or_default();
    let invariants = invariants(&diag, &primary, &oracle);
    Ok(RunOutcome {
        config: cfg.clone(),
        model,
        diagnostics: diag,
        primary,
        secondary,
        oracle,
        sensitivity,
        invariants,
    })
}

/// Full pipeline including FCI, diagnostics and (optionally) the
/// reference-sensitivity comparison.
pub fn run(cfg: &PipelineConfig, cache: Option<&ArtifactCache>) -> Result<RunOutcome> {
    execute(
        cfg,
        cache,
        StageSelection {
            fci: true,
            diagnostics: true,
        },
    )
}

/// Diagnostics only; FCI (and hence ghost classification) on request.
pub fn diagnose(cfg: &PipelineConfig, cache: Option<&ArtifactCache>, with_fci: bool) -> Result<RunOutcome> {
    execute(
        cfg,
        cache,
        StageSelection {
            fci: with_fci,
            diagnostics: true,
        },
    )
}

/// Effective Hamiltonians only.
pub fn export_heff(cfg: &PipelineConfig, cache: Option<&ArtifactCache>) -> Result<Vec<EffectiveHamiltonian>> {
    cfg.validate()?;
    let (model, _) = build_checked_model(cfg)?;
    let reference = prepare_reference(cfg, &model, cfg.meanfield.mode, cache)?;
    let run = run_reference(
        cfg,
        &model,
        reference,
        cfg.embedding.threshold,
        cfg.embedding.rank,
        StageSelection {
            fci: false,
            diagnostics: false,
        },
    )?;
    Ok(run.schemes.into_iter().map(|s| s.heff).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub n_active: usize,
    pub active: String,
    /// Whether this active space contains the previous (larger-threshold) one.
    pub nested: bool,
    pub scheme: Scheme,
    pub state: usize,
    pub multiplicity: String,
    pub excitation_ev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub scheme: Scheme,
    pub state: usize,
    pub excitation_ev: f64,
    pub deviation_from_full_ev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankErrorRow {
    pub rank: usize,
    /// Frobenius norm of the discarded part of `W^p(ω = 0)`.
    pub error: f64,
    pub max_excitation_deviation_ev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub sites: usize,
    pub n_active: usize,
    pub scheme: Scheme,
    pub state: usize,
    pub multiplicity: String,
    pub excitation_ev: f64,
}

const SWEEP_STAGES: StageSelection = StageSelection {
    fci: true,
    diagnostics: false,
};

fn excitations(run: &ReferenceRun) -> Vec<(Scheme, usize, String, f64)> {
    let mut out = Vec::new();
    for s in &run.schemes {
        if let Some(spec) = &s.spectrum {
            for st in spec.states.iter().skip(1) {
                out.push((s.scheme, st.index, st.multiplicity.clone(), st.excitation_ev));
            }
        }
    }
    out
}

/// Excitation energies as a function of the localization threshold.
pub fn sweep_thresholds(cfg: &PipelineConfig, thresholds: &[f64], cache: Option<&ArtifactCache>) -> Result<Vec<ThresholdRow>> {
    let (model, _) = build_checked_model(cfg)?;
    let reference = prepare_reference(cfg, &model, cfg.meanfield.mode, cache)?;
    let runs: Vec<ReferenceRun> = thresholds
        .par_iter()
        .map(|&t| run_reference(cfg, &model, reference.clone(), t, cfg.embedding.rank, SWEEP_STAGES))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut previous: Option<&OrbitalSet> = None;
    for (&t, run) in thresholds.iter().zip(&runs) {
        let nested = previous.is_none_or(|p| p.is_subset_of(&run.active));
        for (scheme, state, mult, e) in excitations(run) {
            rows.push(ThresholdRow {
                threshold: t,
                n_active: run.active.len(),
                active: run.active.to_string(),
                nested,
                scheme,
                state,
                multiplicity: mult,
                excitation_ev: e,
            });
        }
        previous = Some(&run.active);
    }
    Ok(rows)
}

/// Excitation energies versus the number of screening modes kept, plus the
/// reconstruction error of the truncated screening.
pub fn sweep_ranks(
    cfg: &PipelineConfig,
    ranks: &[usize],
    cache: Option<&ArtifactCache>,
) -> Result<(Vec<RankRow>, Vec<RankErrorRow>)> {
    let (model, _) = build_checked_model(cfg)?;
    let reference = prepare_reference(cfg, &model, cfg.meanfield.mode, cache)?;
    let total = reference.poles.rank();
    let ranks: Vec<usize> = if ranks.is_empty() { (1..=total).collect() } else { ranks.to_vec() };
    let full = run_reference(cfg, &model, reference.clone(), cfg.embedding.threshold, 0, SWEEP_STAGES)?;
    let full_exc = excitations(&full);
    let runs: Vec<(usize, ReferenceRun, f64)> = ranks
        .par_iter()
        .map(|&r| {
            let truncated = stage("screening", reference.poles.truncate(r))?;
            let err = reconstruction_error(&reference.poles, &truncated, Complex64::new(0.0, 0.0), 0.0);
            let run = run_reference(cfg, &model, reference.clone(), cfg.embedding.threshold, r, SWEEP_STAGES)?;
            Ok((r, run, err))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (r, run, err) in &runs {
        let mut worst = 0.0f64;
        for ((scheme, state, _, e), (_, _, _, e_full)) in excitations(run).into_iter().zip(&full_exc) {
            let dev = (e - e_full).abs();
            worst = worst.max(dev);
            rows.push(RankRow {
                rank: *r,
                scheme,
                state,
                excitation_ev: e,
                deviation_from_full_ev: dev,
            });
        }
        errors.push(RankErrorRow {
            rank: *r,
            error: *err,
            max_excitation_deviation_ev: worst,
        });
    }
    Ok((rows, errors))
}

/// Re-centres the defect and keeps the doping when the chain length changes.
pub fn resize_chain(spec: &ModelSpec, sites: usize) -> Result<ModelSpec> {
    let mut out = spec.clone();
    let old = spec.n_sites() as i64;
    let shift = (sites as i64 - old) / 2;
    out.lattice.sites = sites;
    if let Some(d) = &mut out.defect {
        for s in d.sites.iter_mut() {
            let moved = *s as i64 + shift;
            if moved < 0 || moved >= sites as i64 {
                return Err(QdetError::Config(format!("defect does not fit in {sites} sites")));
            }
            *s = moved as usize;
        }
    }
    let count = spec.electrons.count as i64 + sites as i64 - old;
    if count <= 0 {
        return Err(QdetError::Config(format!("no electrons left for {sites} sites")));
    }
    out.electrons.count = count as usize;
    Ok(out)
}

/// Excitation energies versus chain length (the analog of a supercell
/// size convergence study).
pub fn sweep_sizes(cfg: &PipelineConfig, sizes: &[usize]) -> Result<Vec<SizeRow>> {
    let runs: Vec<(usize, ReferenceRun)> = sizes
        .par_iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.model = resize_chain(&cfg.model, n)?;
            c.embedding.region = None;
            let (model, _) = build_checked_model(&c)?;
            let reference = prepare_reference(&c, &model, c.meanfield.mode, None)?;
            let run = run_reference(&c, &model, reference, c.embedding.threshold, c.embedding.rank, SWEEP_STAGES)?;
            Ok((n, run))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (n, run) in &runs {
        for (scheme, state, mult, e) in excitations(run) {
            rows.push(SizeRow {
                sites: *n,
                n_active: run.active.len(),
                scheme,
                state,
                multiplicity: mult,
                excitation_ev: e,
            });
        }
    }
    Ok(rows)
}
