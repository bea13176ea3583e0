//! Restricted closed-shell mean-field reference (Hartree or Hartree-Fock).
//!
//! The spatial density matrix has eigenvalues in {0, 1}; the spin factor
//! (2 for the Hartree potential, 1 for exchange) is applied when the
//! operators are built.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};
use crate::greens::OrbitalSet;
use crate::model::ModelSystem;
use crate::tensor::Tensor4;

/// Minimum HOMO/LUMO separation accepted for an integer occupation.
pub const FERMI_DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanFieldMode {
    Hartree,
    HartreeFock,
}

impl std::fmt::Display for MeanFieldMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeanFieldMode::Hartree => write!(f, "hartree"),
            MeanFieldMode::HartreeFock => write!(f, "hartree-fock"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScfOptions {
    pub max_iter: usize,
    pub tolerance: f64,
    pub mixing: f64,
}

impl Default for ScfOptions {
    fn default() -> Self {
        ScfOptions {
            max_iter: 500,
            tolerance: 1e-10,
            mixing: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSolution {
    pub mode: MeanFieldMode,
    /// Columns are MO coefficients on the site basis.
    pub coeffs: DMatrix<f64>,
    pub energies: DVector<f64>,
    /// 0 or 2 per MO.
    pub occupations: Vec<f64>,
    pub fermi_level: f64,
    /// Hartree potential in the MO basis.
    pub v_hartree: DMatrix<f64>,
    /// Exchange operator in the MO basis (zero in Hartree mode).
    pub v_xc: DMatrix<f64>,
    pub h_ks: DMatrix<f64>,
    /// Spatial density matrix in the MO basis.
    pub density: DMatrix<f64>,
    pub total_energy: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl MeanFieldSolution {
    pub fn n_orb(&self) -> usize {
        self.energies.len()
    }

    pub fn n_occ(&self) -> usize {
        self.occupations.iter().filter(|&&o| o > 0.0).count()
    }

    pub fn is_occupied(&self, k: usize) -> bool {
        self.occupations[k] > 0.0
    }

    /// Occupation per spin channel, 0 or 1.
    pub fn spin_occupation(&self, k: usize) -> f64 {
        self.occupations[k] / 2.0
    }

    pub fn homo(&self) -> usize {
        self.n_occ() - 1
    }

    pub fn lumo(&self) -> Option<usize> {
        (self.n_occ() < self.n_orb()).then(|| self.n_occ())
    }

    /// Interaction tensor rotated to the MO basis.
    pub fn mo_interaction(&self, model: &ModelSystem) -> Tensor4 {
        model.v.transform(&self.coeffs)
    }

    pub fn mo_core_hamiltonian(&self, model: &ModelSystem) -> DMatrix<f64> {
        self.coeffs.transpose() * &model.h_core * &self.coeffs
    }

    pub fn to_document(&self) -> MeanFieldDocument {
        let n = self.n_orb();
        let rows = |m: &DMatrix<f64>| (0..n).map(|i| m.row(i).iter().cloned().collect()).collect();
        MeanFieldDocument {
            mode: self.mode,
            n_orb: n,
            coefficients: rows(&self.coeffs),
            energies: self.energies.iter().cloned().collect(),
            occupations: self.occupations.clone(),
            fermi_level: self.fermi_level,
            total_energy: self.total_energy,
            iterations: self.iterations,
            residual: self.residual,
        }
    }

    /// Rebuilds a solution from its stored coefficients; operators are
    /// recomputed from the model so the result is bit-identical to the
    /// original run.
    pub fn from_document(doc: &MeanFieldDocument, model: &ModelSystem) -> Result<Self> {
        let n = doc.n_orb;
        if n != model.n_orb || doc.coefficients.len() != n || doc.energies.len() != n {
            return Err(QdetError::Config("mean-field document does not match the model".into()));
        }
        let coeffs = DMatrix::from_fn(n, n, |i, j| doc.coefficients[i][j]);
        let energies = DVector::from_vec(doc.energies.clone());
        Ok(assemble(
            model,
            doc.mode,
            coeffs,
            energies,
            doc.occupations.clone(),
            doc.iterations,
            doc.residual,
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanFieldDocument {
    pub mode: MeanFieldMode,
    pub n_orb: usize,
    /// `coefficients[site][mo]`
    pub coefficients: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub occupations: Vec<f64>,
    pub fermi_level: f64,
    pub total_energy: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// `J_ij = Σ_kl v_ikjl D_kl` for a site-basis density `D`.
fn coulomb(v: &Tensor4, d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.n();
    DMatrix::from_fn(n, n, |i, j| {
        let mut acc = 0.0;
        for k in 0..n {
            for l in 0..n {
                acc += v.get(i, k, j, l) * d[(k, l)];
            }
        }
        acc
    })
}

/// `K_ij = Σ_kl v_ijkl D_kl`.
fn exchange(v: &Tensor4, d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.n();
    DMatrix::from_fn(n, n, |i, j| {
        let mut acc = 0.0;
        for k in 0..n {
            for l in 0..n {
                acc += v.get(i, j, k, l) * d[(k, l)];
            }
        }
        acc
    })
}

fn fock(model: &ModelSystem, mode: MeanFieldMode, d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut f = &model.h_core + coulomb(&model.v, d) * 2.0;
    if mode == MeanFieldMode::HartreeFock {
        f -= exchange(&model.v, d);
    }
    f
}

fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    // Fix the sign of each vector: largest-magnitude component positive.
    for c in 0..n {
        let col = vectors.column(c);
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, x)| if x.abs() > acc.1 + 1e-12 { (i, x.abs()) } else { acc });
        if vectors[(imax, c)] < 0.0 {
            vectors.column_mut(c).neg_mut();
        }
    }
    (values, vectors)
}

fn occupied_density(coeffs: &DMatrix<f64>, n_occ: usize) -> DMatrix<f64> {
    let c = coeffs.columns(0, n_occ);
    c * c.transpose()
}

fn assemble(
    model: &ModelSystem,
    mode: MeanFieldMode,
    coeffs: DMatrix<f64>,
    energies: DVector<f64>,
    occupations: Vec<f64>,
    iterations: usize,
    residual: f64,
) -> MeanFieldSolution {
    let n = model.n_orb;
    let n_occ = occupations.iter().filter(|&&o| o > 0.0).count();
    let d_site = occupied_density(&coeffs, n_occ);
    let ct = coeffs.transpose();
    let to_mo = |m: DMatrix<f64>| &ct * m * &coeffs;
    let v_hartree = to_mo(coulomb(&model.v, &d_site) * 2.0);
    let v_xc = match mode {
        MeanFieldMode::Hartree => DMatrix::zeros(n, n),
        MeanFieldMode::HartreeFock => to_mo(-exchange(&model.v, &d_site)),
    };
    let f_site = fock(model, mode, &d_site);
    let total_energy = d_site.component_mul(&(&model.h_core + &f_site)).sum();
    let homo = energies[n_occ - 1];
    let fermi_level = if n_occ < n {
        0.5 * (homo + energies[n_occ])
    } else {
        homo
    };
    let density = DMatrix::from_fn(n, n, |i, j| if i == j && i < n_occ { 1.0 } else { 0.0 });
    MeanFieldSolution {
        mode,
        h_ks: DMatrix::from_diagonal(&energies),
        coeffs,
        energies,
        occupations,
        fermi_level,
        v_hartree,
        v_xc,
        density,
        total_energy,
        iterations,
        residual,
    }
}

/// Fixed-point SCF with linear density mixing, starting from the core
/// Hamiltonian and filling the lowest `n_elec / 2` spatial orbitals.
pub fn solve_scf(model: &ModelSystem, mode: MeanFieldMode, opts: &ScfOptions) -> Result<MeanFieldSolution> {
    let n = model.n_orb;
    let n_occ = model.n_elec / 2;
    if model.n_elec % 2 == 1 {
        return Err(QdetError::OddElectronCount(model.n_elec));
    }
    let (_, c0) = sorted_eigen(&model.h_core);
    let mut d_in = occupied_density(&c0, n_occ);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let f = fock(model, mode, &d_in);
        let (_, c) = sorted_eigen(&f);
        let d_out = occupied_density(&c, n_occ);
        residual = (&d_out - &d_in).amax();
        if residual <= opts.tolerance {
            d_in = d_out;
            break;
        }
        d_in = &d_in * (1.0 - opts.mixing) + d_out * opts.mixing;
    }
    if residual > opts.tolerance {
        return Err(QdetError::ScfNotConverged { iterations, residual });
    }
    let f = fock(model, mode, &d_in);
    let (energies, coeffs) = sorted_eigen(&f);
    if n_occ < n {
        let gap = energies[n_occ] - energies[n_occ - 1];
        if gap < FERMI_DEGENERACY_TOL {
            return Err(QdetError::FermiLevelDegeneracy { gap });
        }
    }
    let occupations = (0..n).map(|i| if i < n_occ { 2.0 } else { 0.0 }).collect();
    Ok(assemble(model, mode, coeffs, energies, occupations, iterations, residual))
}

/// MO-basis density restricted to `subset`: diagonal with 1 on the
/// occupied members of the subset, in subset order.
pub fn density_matrix(sol: &MeanFieldSolution, subset: &OrbitalSet) -> DMatrix<f64> {
    let idx = subset.indices();
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| sol.density[(idx[a], idx[b])])
}

/// Hartree and exchange-correlation operators in the MO basis, recomputed
/// from the MO-basis interaction: `V_H,ij = 2 Σ_kl v_ikjl ρ_kl` and, in
/// Hartree-Fock mode, `V_xc,mn = -Σ_k n_k v_mnkk` (same-spin occupation).
pub fn mf_operators(sol: &MeanFieldSolution, model: &ModelSystem) -> (DMatrix<f64>, DMatrix<f64>) {
    let v_mo = sol.mo_interaction(model);
    let vh = coulomb(&v_mo, &sol.density) * 2.0;
    let vxc = match sol.mode {
        MeanFieldMode::Hartree => DMatrix::zeros(sol.n_orb(), sol.n_orb()),
        MeanFieldMode::HartreeFock => -exchange(&v_mo, &sol.density),
    };
    (vh, vxc)
}
