//! Mean-field Green's functions in the MO basis.
//!
//! The mean-field Hamiltonian is diagonal in the MO basis, so every
//! Green's function here is diagonal and returned as its diagonal.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};
use crate::meanfield::MeanFieldSolution;

pub const DEFAULT_ETA: f64 = 1e-4;

/// Sorted set of MO indices (an active space or its complement).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrbitalSet {
    indices: Vec<usize>,
    n: usize,
}

impl OrbitalSet {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(QdetError::InvalidOrbitalSet("duplicate index".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(QdetError::InvalidOrbitalSet(format!(
                    "index {last} out of range for {n} orbitals"
                )));
            }
        }
        Ok(OrbitalSet { indices, n })
    }

    pub fn all(n: usize) -> Self {
        OrbitalSet {
            indices: (0..n).collect(),
            n,
        }
    }

    pub fn empty(n: usize) -> Self {
        OrbitalSet { indices: Vec::new(), n }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn n_total(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> OrbitalSet {
        OrbitalSet {
            indices: (0..self.n).filter(|i| !self.contains(*i)).collect(),
            n: self.n,
        }
    }

    pub fn is_subset_of(&self, other: &OrbitalSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.n
    }

    /// Membership mask over all `n` orbitals.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }
}

impl std::fmt::Display for OrbitalSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Which part of the Green's function (or of anything summed over MOs) to
/// keep: all MOs, the active set, or the environment.
#[derive(Debug, Clone, Copy)]
pub enum Subspace<'a> {
    Full,
    Active(&'a OrbitalSet),
    Reduced(&'a OrbitalSet),
}

impl Subspace<'_> {
    pub fn includes(&self, k: usize) -> bool {
        match self {
            Subspace::Full => true,
            Subspace::Active(a) => a.contains(k),
            Subspace::Reduced(a) => !a.contains(k),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Subspace::Full => "full",
            Subspace::Active(_) => "active",
            Subspace::Reduced(_) => "reduced",
        }
    }
}

/// Diagonal 0/1 projector onto `a`.
pub fn projector(a: &OrbitalSet, n_orb: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_orb, n_orb, |i, j| if i == j && a.contains(i) { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct GreensEvaluator<'a> {
    sol: &'a MeanFieldSolution,
    eta: f64,
}

impl<'a> GreensEvaluator<'a> {
    pub fn new(sol: &'a MeanFieldSolution, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(QdetError::InvalidBroadening(eta));
        }
        Ok(GreensEvaluator { sol, eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn solution(&self) -> &MeanFieldSolution {
        self.sol
    }

    /// Diagonal of `G0(ω)`. On the real axis each pole is shifted by
    /// `iη·sgn(ε_i - ε_F)`; off the axis the bare resolvent is used.
    pub fn g0(&self, omega: Complex64, variant: Subspace<'_>) -> Result<DVector<Complex64>> {
        let sol = self.sol;
        let n = sol.n_orb();
        let on_axis = omega.im == 0.0;
        let mut out = DVector::zeros(n);
        for i in 0..n {
            if !variant.includes(i) {
                continue;
            }
            let e = sol.energies[i];
            let shift = if on_axis {
                Complex64::new(0.0, self.eta * (e - sol.fermi_level).signum())
            } else {
                Complex64::new(0.0, 0.0)
            };
            let denom = omega - e + shift;
            if denom.norm() == 0.0 {
                return Err(QdetError::PoleHit {
                    omega: omega.to_string(),
                });
            }
            out[i] = denom.inv();
        }
        Ok(out)
    }

    pub fn g0_matrix(&self, omega: Complex64, variant: Subspace<'_>) -> Result<DMatrix<Complex64>> {
        Ok(DMatrix::from_diagonal(&self.g0(omega, variant)?))
    }
}
