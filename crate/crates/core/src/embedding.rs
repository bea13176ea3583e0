//! Double counting, effective Hamiltonian and chain-rule diagnostics.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};
use crate::greens::{OrbitalSet, Subspace};
use crate::meanfield::MeanFieldSolution;
use crate::screening::{
    polarizability, polarizability_from_g, rpa_modes_for, Frequency, PairOperator, PoleRepresentation,
};
use crate::selfenergy::{
    qp_iterate, sigma_analytic, sigma_c_contour, static_symmetrize, QpOptions, QpSolution, QuadSpec, ScreeningPath,
    SigmaValue, WScope,
};
use crate::tensor::{Tensor4, TENSOR_LAYOUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Edc,
    Hfdc,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Edc => write!(f, "EDC"),
            Scheme::Hfdc => write!(f, "HFDC"),
        }
    }
}

/// `2 Σ_{k ∈ A, occ} w_(ik),(jk)`: Hartree potential of the active
/// mean-field density through the interaction `w` (full MO matrix).
pub fn hartree_term(sol: &MeanFieldSolution, w: &Tensor4, active: &OrbitalSet) -> DMatrix<f64> {
    let n = sol.n_orb();
    let mut out = DMatrix::zeros(n, n);
    for &k in active.indices().iter().filter(|&&k| sol.is_occupied(k)) {
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += 2.0 * w.get(i, k, j, k);
            }
        }
    }
    out
}

/// `Σ_{k ∈ A, occ} w_(ik),(jk)` in exchange pairing, `w_ijkk`.
pub fn exchange_term(sol: &MeanFieldSolution, w: &Tensor4, active: &OrbitalSet) -> DMatrix<f64> {
    let n = sol.n_orb();
    let mut out = DMatrix::zeros(n, n);
    for &k in active.indices().iter().filter(|&&k| sol.is_occupied(k)) {
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += w.get(i, j, k, k);
            }
        }
    }
    out
}

fn block(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

fn block_c(m: &DMatrix<Complex64>, idx: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Full-system G0W0 on top of a mean-field reference: the ingredients every
/// double-counting term is built from.
#[derive(Debug)]
pub struct GwReference {
    pub sol: MeanFieldSolution,
    pub v_mo: Tensor4,
    /// Poles of `W^p`, possibly rank-truncated.
    pub poles: PoleRepresentation,
    /// Exchange-correlation potential of the reference, MO basis.
    pub v_xc: DMatrix<f64>,
    pub qp: QpSolution,
    /// Broadening used only to flag evaluations close to a pole.
    pub eta: f64,
    pole_warnings: AtomicUsize,
}

impl GwReference {
    /// Runs the quasiparticle iteration for every orbital; orbitals that do
    /// not converge are recorded, not rejected.
    pub fn new(
        sol: MeanFieldSolution,
        v_mo: Tensor4,
        poles: PoleRepresentation,
        eta: f64,
        qp_opts: &QpOptions,
    ) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(QdetError::InvalidBroadening(eta));
        }
        let v_xc = sol.v_xc.clone();
        let mut gw = GwReference {
            sol,
            v_mo,
            poles,
            v_xc,
            qp: QpSolution { outcomes: Vec::new() },
            eta,
            pole_warnings: AtomicUsize::new(0),
        };
        let all: Vec<usize> = (0..gw.sol.n_orb()).collect();
        gw.qp = qp_iterate(&gw.sol, &all, qp_opts, |i, x| {
            let s = gw.sigma(x, Subspace::Full, WScope::Full);
            Ok(s.matrix[(i, i)].re - gw.v_xc[(i, i)])
        })?;
        Ok(gw)
    }

    pub fn n_orb(&self) -> usize {
        self.sol.n_orb()
    }

    /// `Σ[G, W](ω)` on the real axis (principal value). Evaluations within
    /// `10 η` of a pole are counted and logged.
    pub fn sigma(&self, omega: f64, variant: Subspace<'_>, scope: WScope) -> SigmaValue {
        let s = sigma_analytic(
            &self.sol,
            &self.v_mo,
            &self.poles,
            Complex64::new(omega, 0.0),
            0.0,
            variant,
            scope,
        );
        if s.pole_distance < 10.0 * self.eta {
            self.pole_warnings.fetch_add(1, Ordering::Relaxed);
            log::warn!(
                "self-energy evaluated {:.3e} Ha from a pole at ω = {omega:.6}",
                s.pole_distance
            );
        }
        s
    }

    pub fn pole_warnings(&self) -> usize {
        self.pole_warnings.load(Ordering::Relaxed)
    }

    pub fn qp_energies(&self) -> Vec<f64> {
        self.qp.energies()
    }

    /// Static symmetrized form of `Σ[G variant, W0]` over `idx`, evaluated
    /// at the quasiparticle energies.
    pub fn sigma_static(&self, variant: Subspace<'_>, idx: &[usize]) -> Result<DMatrix<f64>> {
        let qp = self.qp_energies();
        static_symmetrize(|w| Ok(self.sigma(w, variant, WScope::Full).matrix), &qp, idx)
    }
}

/// `P^dc = -i G0^A G0^A`.
pub fn p_dc(sol: &MeanFieldSolution, active: &OrbitalSet, freq: Frequency) -> Result<PairOperator> {
    polarizability_from_g(sol, freq, Subspace::Active(active))
}

/// `Σ^dc(ω) = V_H[W0^R, ρ^A] + Σ[G0^A, W0](ω)` over all MOs.
pub fn sigma_dc(gw: &GwReference, wr: &Tensor4, active: &OrbitalSet, omega: f64) -> DMatrix<Complex64> {
    let hartree = hartree_term(&gw.sol, wr, active).map(|x| Complex64::new(x, 0.0));
    hartree + gw.sigma(omega, Subspace::Active(active), WScope::Full).matrix
}

/// Static `Σ^dc` on the active block, symmetrized at the QP energies.
pub fn sigma_dc_static(gw: &GwReference, wr: &Tensor4, active: &OrbitalSet) -> Result<DMatrix<f64>> {
    let idx = active.indices();
    let hartree = block(&hartree_term(&gw.sol, wr, active), idx);
    Ok(hartree + gw.sigma_static(Subspace::Active(active), idx)?)
}

/// Pieces of the exact double counting, kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct EdcTerms {
    pub v_xc: DMatrix<f64>,
    pub hartree: DMatrix<f64>,
    /// Static `ΔΣ_xc = Σ[G0^R, W0]` at the QP energies.
    pub delta_sigma: DMatrix<f64>,
}

impl EdcTerms {
    pub fn total(&self) -> DMatrix<f64> {
        &self.v_xc + &self.hartree - &self.delta_sigma
    }
}

pub fn edc_terms(gw: &GwReference, wr: &Tensor4, active: &OrbitalSet) -> Result<EdcTerms> {
    if active.is_empty() {
        return Err(QdetError::EmptyActiveSpace);
    }
    gw.qp.ensure_converged(active)?;
    let idx = active.indices();
    Ok(EdcTerms {
        v_xc: block(&gw.v_xc, idx),
        hartree: block(&hartree_term(&gw.sol, wr, active), idx),
        delta_sigma: gw.sigma_static(Subspace::Reduced(active), idx)?,
    })
}

/// One-body double counting on the active block.
pub fn t_dc(gw: &GwReference, wr: &Tensor4, active: &OrbitalSet, scheme: Scheme) -> Result<DMatrix<f64>> {
    if active.is_empty() {
        return Err(QdetError::EmptyActiveSpace);
    }
    match scheme {
        Scheme::Edc => Ok(edc_terms(gw, wr, active)?.total()),
        Scheme::Hfdc => {
            let idx = active.indices();
            let hf = hartree_term(&gw.sol, wr, active) - exchange_term(&gw.sol, wr, active);
            Ok(block(&hf, idx))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveHamiltonian {
    pub active: OrbitalSet,
    pub t_eff: DMatrix<f64>,
    pub v_eff: Tensor4,
    pub n_active_elec: usize,
    pub scheme: Scheme,
    pub provenance: BTreeMap<String, String>,
}

/// `t_eff = H^KS|_A - t^dc`, `v_eff = W0^R(ω = 0)|_A`.
pub fn build_heff(gw: &GwReference, wr: &Tensor4, active: &OrbitalSet, scheme: Scheme) -> Result<EffectiveHamiltonian> {
    if active.is_empty() {
        return Err(QdetError::EmptyActiveSpace);
    }
    let idx = active.indices();
    let t = block(&gw.sol.h_ks, idx) - t_dc(gw, wr, active, scheme)?;
    let t_eff = (&t + t.transpose()) * 0.5;
    let n_active_elec = 2 * idx.iter().filter(|&&k| gw.sol.is_occupied(k)).count();
    Ok(EffectiveHamiltonian {
        active: active.clone(),
        t_eff,
        v_eff: wr.restrict(idx),
        n_active_elec,
        scheme,
        provenance: BTreeMap::new(),
    })
}

impl EffectiveHamiltonian {
    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn with_shift(&self, c: f64) -> EffectiveHamiltonian {
        let mut out = self.clone();
        for i in 0..self.n_active() {
            out.t_eff[(i, i)] += c;
        }
        out
    }

    pub fn to_document(&self) -> HeffDocument {
        let m = self.n_active();
        HeffDocument {
            layout: TENSOR_LAYOUT.to_string(),
            units: "hartree".into(),
            scheme: self.scheme,
            active_orbitals: self.active.indices().to_vec(),
            n_orb_total: self.active.n_total(),
            n_active_elec: self.n_active_elec,
            t_eff: (0..m).map(|i| self.t_eff.row(i).iter().cloned().collect()).collect(),
            v_eff: self
                .v_eff
                .canonical_entries(0.0)
                .into_iter()
                .map(|(idx, value)| SparseEntry { idx, value })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_document(doc: &HeffDocument) -> Result<Self> {
        let m = doc.active_orbitals.len();
        let active = OrbitalSet::new(doc.active_orbitals.clone(), doc.n_orb_total)?;
        if doc.t_eff.len() != m || doc.t_eff.iter().any(|r| r.len() != m) {
            return Err(QdetError::Config("t_eff shape does not match the active space".into()));
        }
        let t_eff = DMatrix::from_fn(m, m, |i, j| doc.t_eff[i][j]);
        let mut v_eff = Tensor4::zeros(m);
        for e in &doc.v_eff {
            let [i, j, k, l] = e.idx;
            v_eff.element(i, j, k, l)?;
            v_eff.set_symmetric(i, j, k, l, e.value);
        }
        Ok(EffectiveHamiltonian {
            active,
            t_eff,
            v_eff,
            n_active_elec: doc.n_active_elec,
            scheme: doc.scheme,
            provenance: doc.provenance.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEntry {
    pub idx: [usize; 4],
    pub value: f64,
}

/// Serialized effective Hamiltonian: dense one-body matrix, canonical
/// sparse two-body list (each entry stands for its eight symmetry images).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeffDocument {
    pub layout: String,
    pub units: String,
    pub scheme: Scheme,
    pub active_orbitals: Vec<usize>,
    pub n_orb_total: usize,
    pub n_active_elec: usize,
    pub t_eff: Vec<Vec<f64>>,
    pub v_eff: Vec<SparseEntry>,
    pub provenance: BTreeMap<String, String>,
}

/// `W^p` seen by an embedded G0W0 calculation whose inputs are the active
/// Green's function and the partially screened interaction: `W0^R(z)` from
/// `(1 - v P0^R) W0^R = v`, screened once more by `P0^A`, minus `v`.
pub struct EmbeddedPath {
    sol: MeanFieldSolution,
    active: OrbitalSet,
    v: DMatrix<Complex64>,
}

impl EmbeddedPath {
    pub fn new(sol: &MeanFieldSolution, v_mo: &Tensor4, active: &OrbitalSet) -> Self {
        EmbeddedPath {
            sol: sol.clone(),
            active: active.clone(),
            v: v_mo.pair_matrix().map(|x| Complex64::new(x, 0.0)),
        }
    }

    fn solve(lhs: DMatrix<Complex64>, rhs: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        lhs.clone().lu().solve(rhs).ok_or_else(|| QdetError::RpaInstability {
            singular_value: lhs.svd(false, false).singular_values.min(),
        })
    }

    /// Dynamic partially screened interaction `W0^R(z)`.
    pub fn wr(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let freq = Frequency::at(z, 0.0);
        let pr = polarizability_from_g(&self.sol, freq, Subspace::Reduced(&self.active))?;
        let dim = self.v.nrows();
        Self::solve(DMatrix::identity(dim, dim) - &self.v * pr.matrix, &self.v)
    }
}

impl ScreeningPath for EmbeddedPath {
    fn wp(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let freq = Frequency::at(z, 0.0);
        let wr = self.wr(z)?;
        let pa = polarizability_from_g(&self.sol, freq, Subspace::Active(&self.active))?;
        let dim = self.v.nrows();
        let w = Self::solve(DMatrix::identity(dim, dim) - &wr * pa.matrix, &wr)?;
        Ok(w - &self.v)
    }
}

/// Self-energy of the embedded G0W0 run (all MOs, real `ω`): Hartree from
/// `ρ^A` through `W0^R(0)`, bare exchange over active occupied orbitals,
/// and correlation from `G0^A` with the re-screened interaction, integrated
/// along the imaginary axis.
pub fn embedded_sigma(
    sol: &MeanFieldSolution,
    v_mo: &Tensor4,
    active: &OrbitalSet,
    omega: f64,
    quad: QuadSpec,
) -> Result<DMatrix<f64>> {
    let n = sol.n_orb();
    let path = EmbeddedPath::new(sol, v_mo, active);
    let wr0 = path.wr(Complex64::new(0.0, 0.0))?;
    let mut out = DMatrix::zeros(n, n);
    for &k in active.indices() {
        if !sol.is_occupied(k) {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                let hartree = wr0[(i * n + j, k * n + k)].re;
                let exchange = v_mo.get(i, j, k, k);
                out[(i, j)] += 2.0 * hartree - exchange;
            }
        }
    }
    let corr = sigma_c_contour(sol, &path, Complex64::new(omega, 0.0), Subspace::Active(active), quad)?;
    Ok(out + corr)
}

/// Real frequencies kept away from every pole that enters the embedded and
/// pole-sum self-energies: `ε_k`, `ε_k ± Ω` (full and reduced RPA), and
/// `ε_k ± Δ` for active transitions.
pub fn safe_frequencies(gw: &GwReference, active: &OrbitalSet, count: usize) -> Result<Vec<f64>> {
    let sol = &gw.sol;
    let n = sol.n_orb();
    let reduced = rpa_modes_for(sol, &gw.v_mo, Subspace::Reduced(active))?;
    let mut shifts: Vec<f64> = vec![0.0];
    shifts.extend(gw.poles.modes.iter().map(|m| m.energy));
    shifts.extend(reduced.modes.iter().map(|m| m.energy));
    for &i in active.indices().iter().filter(|&&i| sol.is_occupied(i)) {
        for &a in active.indices().iter().filter(|&&a| !sol.is_occupied(a)) {
            shifts.push(sol.energies[a] - sol.energies[i]);
        }
    }
    let mut points = Vec::new();
    for k in 0..n {
        for &s in &shifts {
            points.push(sol.energies[k] + s);
            points.push(sol.energies[k] - s);
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = sol.energies[0] - 0.5;
    let hi = sol.energies[n - 1] + 0.5;
    let mut gaps: Vec<(f64, f64)> = points
        .windows(2)
        .map(|w| (w[1] - w[0], 0.5 * (w[0] + w[1])))
        .filter(|&(_, mid)| mid > lo && mid < hi)
        .collect();
    gaps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    let mut out: Vec<f64> = gaps.iter().take(count).map(|g| g.1).collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleDiagnostics {
    pub scheme: Scheme,
    /// `max |P0 - P^dc|` on the active block over the sampled frequencies.
    pub polarizability_residual: f64,
    /// `max |Σ^embedded - Σ^dc|` on the active block over sampled real ω.
    pub sigma_residual: f64,
    pub frequencies: Vec<f64>,
}

/// Frequencies at which the polarizability chain rule is sampled.
pub fn polarizability_grid() -> Vec<Complex64> {
    vec![
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.5),
        Complex64::new(0.0, 1.0),
        Complex64::new(1.0, 0.1),
        Complex64::new(-0.7, 0.3),
    ]
}

/// Chain-rule residuals of a double-counting scheme. For EDC the embedded
/// self-energy is compared with `Σ^dc`; for HFDC with its static
/// Hartree-Fock-like double counting `V_H[W0^R] - K[W0^R]`.
pub fn chain_rule_residual(
    gw: &GwReference,
    wr: &Tensor4,
    active: &OrbitalSet,
    scheme: Scheme,
    frequencies: &[f64],
    quad: QuadSpec,
) -> Result<ChainRuleDiagnostics> {
    let sol = &gw.sol;
    let mut p_res = 0.0f64;
    for z in polarizability_grid() {
        let freq = Frequency::at(z, 0.0);
        let full = polarizability(sol, freq, Subspace::Full)?.project(active);
        let dc = p_dc(sol, active, freq)?.project(active);
        p_res = p_res.max(full.max_abs_diff(&dc));
    }
    let idx = active.indices();
    let hfdc = block(
        &(hartree_term(sol, wr, active) - exchange_term(sol, wr, active)),
        idx,
    );
    let mut s_res = 0.0f64;
    for &w in frequencies {
        let emb = block(&embedded_sigma(sol, &gw.v_mo, active, w, quad)?, idx);
        let reference = match scheme {
            Scheme::Edc => block_c(&sigma_dc(gw, wr, active, w), idx).map(|z| z.re),
            Scheme::Hfdc => hfdc.clone(),
        };
        s_res = s_res.max((emb - reference).amax());
    }
    Ok(ChainRuleDiagnostics {
        scheme,
        polarizability_residual: p_res,
        sigma_residual: s_res,
        frequencies: frequencies.to_vec(),
    })
}

/// `max |Σ_xc,static - V_xc|` over the active-environment block.
pub fn offdiag_coupling(gw: &GwReference, active: &OrbitalSet) -> Result<f64> {
    let n = gw.n_orb();
    let all: Vec<usize> = (0..n).collect();
    let s = gw.sigma_static(Subspace::Full, &all)? - &gw.v_xc;
    let env = active.complement();
    let mut worst = 0.0f64;
    for &i in active.indices() {
        for &j in env.indices() {
            worst = worst.max(s[(i, j)].abs());
        }
    }
    Ok(worst)
}
