//! G0W0 self-energy: exchange, correlation by two frequency-integration
//! paths (closed-form pole sum and imaginary-axis contour), quasiparticle
//! iteration and static symmetrization.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};
use crate::greens::{OrbitalSet, Subspace};
use crate::meanfield::MeanFieldSolution;
use crate::screening::{polarizability, reducible_chi, Frequency, PoleRepresentation};
use crate::tensor::{pair_index, Tensor4};

/// Exchange self-energy `Σ_x,mn = -Σ_k n_k v_(mk),(nk)` with `k` restricted
/// to the given Green's function variant.
pub fn sigma_x(sol: &MeanFieldSolution, v_mo: &Tensor4, variant: Subspace<'_>) -> DMatrix<f64> {
    let n = sol.n_orb();
    let mut out = DMatrix::zeros(n, n);
    for k in (0..n).filter(|&k| variant.includes(k) && sol.is_occupied(k)) {
        for m in 0..n {
            for p in 0..n {
                out[(m, p)] -= v_mo.get(m, p, k, k);
            }
        }
    }
    out
}

/// Which screened interaction enters `i G W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WScope {
    /// Full `W0 = v + W^p`: exchange plus correlation.
    Full,
    /// Only the correlation part `W^p`.
    Polar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaValue {
    pub matrix: DMatrix<Complex64>,
    /// Distance from `ω` to the closest pole `ε_k ∓ Ω_s` of the convolution.
    pub pole_distance: f64,
}

/// Correlation self-energy from the pole representation of `W^p`:
/// `Σ_c,mn(ω) = Σ_k Σ_s w_s[mk] w_s[nk] [n_k/(ω - ε_k + Ω_s - iη) + (1 - n_k)/(ω - ε_k - Ω_s + iη)]`.
pub fn sigma_c_analytic(
    sol: &MeanFieldSolution,
    poles: &PoleRepresentation,
    omega: Complex64,
    eta: f64,
    variant: Subspace<'_>,
) -> SigmaValue {
    let n = sol.n_orb();
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    let mut pole_distance = f64::INFINITY;
    let ieta = Complex64::new(0.0, eta);
    for k in (0..n).filter(|&k| variant.includes(k)) {
        let occ = sol.is_occupied(k);
        for mode in &poles.modes {
            let pole = if occ {
                sol.energies[k] - mode.energy
            } else {
                sol.energies[k] + mode.energy
            };
            pole_distance = pole_distance.min((omega - pole).norm());
            let d = if occ {
                (omega - pole - ieta).inv()
            } else {
                (omega - pole + ieta).inv()
            };
            let u: Vec<f64> = (0..n).map(|m| mode.vector[pair_index(n, m, k)]).collect();
            for m in 0..n {
                if u[m] == 0.0 {
                    continue;
                }
                for p in 0..n {
                    out[(m, p)] += d * (u[m] * u[p]);
                }
            }
        }
    }
    SigmaValue {
        matrix: out,
        pole_distance,
    }
}

/// `Σ[G, W](ω)` for the requested scope: correlation only, or exchange plus
/// correlation.
pub fn sigma_analytic(
    sol: &MeanFieldSolution,
    v_mo: &Tensor4,
    poles: &PoleRepresentation,
    omega: Complex64,
    eta: f64,
    variant: Subspace<'_>,
    scope: WScope,
) -> SigmaValue {
    let mut value = sigma_c_analytic(sol, poles, omega, eta, variant);
    if scope == WScope::Full {
        value.matrix += sigma_x(sol, v_mo, variant).map(|x| Complex64::new(x, 0.0));
    }
    value
}

/// Source of `W^p(z) = W(z) - v` for the contour path.
pub trait ScreeningPath {
    /// `W^p(z)` as an `n² × n²` pair matrix.
    fn wp(&self, z: Complex64) -> Result<DMatrix<Complex64>>;
}

/// `W^p = v χ v` with `χ` from the Dyson equation of the full
/// polarizability, evaluated without broadening.
pub struct ChiPath<'a> {
    sol: &'a MeanFieldSolution,
    v_pair: DMatrix<f64>,
}

impl<'a> ChiPath<'a> {
    pub fn new(sol: &'a MeanFieldSolution, v_mo: &Tensor4) -> Self {
        ChiPath {
            sol,
            v_pair: v_mo.pair_matrix(),
        }
    }
}

impl ScreeningPath for ChiPath<'_> {
    fn wp(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let p = polarizability(self.sol, Frequency::at(z, 0.0), Subspace::Full)?;
        let chi = reducible_chi(&p, &self.v_pair)?;
        let v = self.v_pair.map(|x| Complex64::new(x, 0.0));
        Ok(&v * chi.matrix * &v)
    }
}

impl ScreeningPath for PoleRepresentation {
    fn wp(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        Ok(self.evaluate(z, 0.0))
    }
}

/// Imaginary-axis quadrature: Gauss-Legendre on `t ∈ (0,1)` mapped by
/// `ν = t / (1 - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSpec {
    pub nodes: usize,
    /// When set, the result is compared against twice the nodes.
    pub tolerance: Option<f64>,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            nodes: 64,
            tolerance: None,
        }
    }
}

impl QuadSpec {
    pub fn with_nodes(nodes: usize) -> Self {
        QuadSpec { nodes, tolerance: None }
    }
}

/// Gauss-Legendre nodes and weights on `(0, 1)`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Initial guess (Tricomi), refined by Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * weight;
        w[n - 1 - i] = 0.5 * weight;
    }
    (x, w)
}

/// `n × n` block `B_k[m][p] = W^p[(m,k),(p,k)]`.
fn k_block(wp: &DMatrix<Complex64>, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |m, p| wp[(pair_index(n, m, k), pair_index(n, p, k))].re)
}

fn contour_with_nodes(
    sol: &MeanFieldSolution,
    path: &dyn ScreeningPath,
    omega: f64,
    variant: Subspace<'_>,
    nodes: usize,
) -> Result<DMatrix<f64>> {
    let n = sol.n_orb();
    let ks: Vec<usize> = (0..n).filter(|&k| variant.includes(k)).collect();
    let mut out = DMatrix::zeros(n, n);
    if ks.is_empty() {
        return Ok(out);
    }
    let w0 = path.wp(Complex64::new(0.0, 0.0))?;
    let static_blocks: Vec<DMatrix<f64>> = ks.iter().map(|&k| k_block(&w0, n, k)).collect();
    let a: Vec<f64> = ks.iter().map(|&k| sol.energies[k] - omega).collect();

    // Imaginary-axis part with the static value subtracted; the subtracted
    // piece integrates to sgn(a)/2.
    let (t, wt) = gauss_legendre(nodes);
    for (tj, wj) in t.iter().zip(&wt) {
        let nu = tj / (1.0 - tj);
        let jac = wj / ((1.0 - tj) * (1.0 - tj));
        let wnu = path.wp(Complex64::new(0.0, nu))?;
        for (idx, &k) in ks.iter().enumerate() {
            if a[idx] == 0.0 {
                continue;
            }
            let kernel = jac * a[idx] / (a[idx] * a[idx] + nu * nu) / std::f64::consts::PI;
            out += (k_block(&wnu, n, k) - &static_blocks[idx]) * kernel;
        }
    }
    for (idx, &k) in ks.iter().enumerate() {
        let ak = a[idx];
        let occ = sol.is_occupied(k);
        if ak == 0.0 {
            let weight = 0.5 - sol.spin_occupation(k);
            out += &static_blocks[idx] * weight;
            continue;
        }
        out += &static_blocks[idx] * (0.5 * ak.signum());
        // Residues of poles enclosed by the deformed contour.
        let f = if occ && omega < sol.energies[k] {
            -1.0
        } else if !occ && sol.energies[k] < omega {
            1.0
        } else {
            0.0
        };
        if f != 0.0 {
            let wr = path.wp(Complex64::new(ak, 0.0))?;
            out += k_block(&wr, n, k) * f;
        }
    }
    Ok(out)
}

/// Correlation self-energy at real `ω` by contour deformation: an integral
/// along the imaginary axis plus residues of the Green's function poles
/// enclosed between the real axis and the contour.
pub fn sigma_c_contour(
    sol: &MeanFieldSolution,
    path: &dyn ScreeningPath,
    omega: Complex64,
    variant: Subspace<'_>,
    quad: QuadSpec,
) -> Result<DMatrix<f64>> {
    if omega.im != 0.0 {
        return Err(QdetError::ComplexFrequency(omega.to_string()));
    }
    let coarse = contour_with_nodes(sol, path, omega.re, variant, quad.nodes)?;
    match quad.tolerance {
        None => Ok(coarse),
        Some(tolerance) => {
            let fine = contour_with_nodes(sol, path, omega.re, variant, 2 * quad.nodes)?;
            let residual = (&fine - &coarse).amax();
            if residual > tolerance {
                return Err(QdetError::QuadratureNotConverged { residual, tolerance });
            }
            Ok(fine)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    pub tolerance: f64,
    pub damping: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tolerance: 1e-8,
            damping: 0.5,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpOutcome {
    pub orbital: usize,
    pub ks_energy: f64,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub previous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub outcomes: Vec<QpOutcome>,
}

impl QpSolution {
    pub fn energies(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.energy).collect()
    }

    /// Errors on the first orbital of `subset` that did not converge.
    pub fn ensure_converged(&self, subset: &OrbitalSet) -> Result<()> {
        for &i in subset.indices() {
            let o = &self.outcomes[i];
            if !o.converged {
                return Err(QdetError::QpNotConverged {
                    orbital: i,
                    previous: o.previous,
                    last: o.energy,
                });
            }
        }
        Ok(())
    }
}

/// Solves `x = ε_i + Re[Σ_xc(x) - V_xc]_ii` per orbital. `shift(i, x)`
/// returns `Re[Σ_xc(x) - V_xc]_ii`. The first step is undamped; later
/// steps mix with the given damping factor.
pub fn qp_iterate<F>(sol: &MeanFieldSolution, orbitals: &[usize], opts: &QpOptions, shift: F) -> Result<QpSolution>
where
    F: Fn(usize, f64) -> Result<f64>,
{
    let n = sol.n_orb();
    let mut outcomes: Vec<QpOutcome> = (0..n)
        .map(|i| QpOutcome {
            orbital: i,
            ks_energy: sol.energies[i],
            energy: sol.energies[i],
            iterations: 0,
            converged: false,
            previous: sol.energies[i],
        })
        .collect();
    for &i in orbitals {
        let eps = sol.energies[i];
        let mut x = eps;
        let mut previous = eps;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            let fx = eps + shift(i, x)?;
            if (fx - x).abs() < opts.tolerance {
                converged = true;
                break;
            }
            previous = x;
            x = if iterations == 1 {
                fx
            } else {
                x + opts.damping * (fx - x)
            };
        }
        outcomes[i] = QpOutcome {
            orbital: i,
            ks_energy: eps,
            energy: x,
            iterations,
            converged,
            previous,
        };
    }
    Ok(QpSolution { outcomes })
}

/// `S_ij = ½ Re[Σ_ij(ε_i) + Σ_ij(ε_j)]` over the listed orbitals, using one
/// matrix evaluation per orbital energy. `energies` is indexed by MO.
pub fn static_symmetrize<F>(eval: F, energies: &[f64], idx: &[usize]) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> Result<DMatrix<Complex64>>,
{
    let m = idx.len();
    let mats: Vec<DMatrix<Complex64>> = idx.iter().map(|&i| eval(energies[i])).collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let (i, j) = (idx[a], idx[b]);
            let value = if a == b {
                mats[a][(i, i)].re
            } else {
                0.5 * (mats[a][(i, j)].re + mats[b][(i, j)].re)
            };
            out[(a, b)] = value;
            out[(b, a)] = value;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::MeanFieldMode;
    use crate::screening::rpa_modes;
    use nalgebra::DVector;

    fn two_level() -> MeanFieldSolution {
        MeanFieldSolution {
            mode: MeanFieldMode::Hartree,
            coeffs: DMatrix::identity(2, 2),
            energies: DVector::from_vec(vec![-1.0, 1.0]),
            occupations: vec![2.0, 0.0],
            fermi_level: 0.0,
            v_hartree: DMatrix::zeros(2, 2),
            v_xc: DMatrix::zeros(2, 2),
            h_ks: DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
            density: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
            total_energy: 0.0,
            iterations: 0,
            residual: 0.0,
        }
    }

    fn coupled(k: f64) -> Tensor4 {
        let mut v = Tensor4::zeros(2);
        v.set_symmetric(0, 0, 0, 0, 0.5);
        v.set_symmetric(1, 1, 1, 1, 0.4);
        v.set_symmetric(0, 1, 0, 1, 0.3);
        v.set_symmetric(0, 0, 1, 1, k);
        v
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        for p in 0..10 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "degree {p}");
        }
    }

    #[test]
    fn exchange_single_occupied_orbital() {
        let sol = two_level();
        let v = coupled(0.2);
        let sx = sigma_x(&sol, &v, Subspace::Full);
        assert_eq!(sx[(0, 0)], -0.5);
        assert_eq!(sx[(1, 1)], -v.get(1, 1, 0, 0));
        assert_eq!(sigma_x(&sol, &Tensor4::zeros(2), Subspace::Full), DMatrix::zeros(2, 2));
    }

    #[test]
    fn single_mode_pole_expression() {
        let sol = two_level();
        let v = coupled(0.2);
        let poles = rpa_modes(&sol, &v).unwrap();
        assert_eq!(poles.rank(), 1);
        let w = &poles.modes[0].vector;
        let om = poles.modes[0].energy;
        let z = Complex64::new(0.3, 0.0);
        let s = sigma_c_analytic(&sol, &poles, z, 0.0, Subspace::Full);
        // k = 0 (occupied) and k = 1 (virtual) terms for m = n = 0.
        let w00 = w[pair_index(2, 0, 0)];
        let w01 = w[pair_index(2, 0, 1)];
        let hand = w00 * w00 / (0.3 + 1.0 + om) + w01 * w01 / (0.3 - 1.0 - om);
        assert!((s.matrix[(0, 0)].re - hand).abs() < 1e-14);
    }

    #[test]
    fn contour_matches_analytic_on_two_levels() {
        let sol = two_level();
        let v = coupled(0.2);
        let poles = rpa_modes(&sol, &v).unwrap();
        let path = ChiPath::new(&sol, &v);
        for omega in [-1.0, -0.4, 0.2, 0.7, 1.6] {
            let z = Complex64::new(omega, 0.0);
            let a = sigma_c_analytic(&sol, &poles, z, 0.0, Subspace::Full).matrix.map(|c| c.re);
            let c = sigma_c_contour(&sol, &path, z, Subspace::Full, QuadSpec::default()).unwrap();
            assert!((a - c).amax() < 1e-6, "omega {omega}");
        }
    }

    #[test]
    fn contour_rejects_complex_frequency() {
        let sol = two_level();
        let v = coupled(0.2);
        let path = ChiPath::new(&sol, &v);
        assert!(matches!(
            sigma_c_contour(&sol, &path, Complex64::new(0.0, 1.0), Subspace::Full, QuadSpec::default()),
            Err(QdetError::ComplexFrequency(_))
        ));
    }

    #[test]
    fn quadrature_tolerance_enforced() {
        let sol = two_level();
        let v = coupled(0.2);
        let path = ChiPath::new(&sol, &v);
        let quad = QuadSpec {
            nodes: 2,
            tolerance: Some(1e-14),
        };
        assert!(matches!(
            sigma_c_contour(&sol, &path, Complex64::new(0.1, 0.0), Subspace::Full, quad),
            Err(QdetError::QuadratureNotConverged { .. })
        ));
    }

    #[test]
    fn qp_without_interaction_is_identity() {
        let sol = two_level();
        let qp = qp_iterate(&sol, &[0, 1], &QpOptions::default(), |_, _| Ok(0.0)).unwrap();
        for o in &qp.outcomes {
            assert_eq!(o.energy, o.ks_energy);
            assert_eq!(o.iterations, 1);
            assert!(o.converged);
        }
    }

    #[test]
    fn qp_first_step_is_undamped() {
        let sol = two_level();
        let opts = QpOptions {
            max_iter: 1,
            ..QpOptions::default()
        };
        let qp = qp_iterate(&sol, &[0], &opts, |_, x| Ok(0.1 * x + 0.05)).unwrap();
        assert!(!qp.outcomes[0].converged);
        assert_eq!(qp.outcomes[0].energy, -1.0 + (-0.1 + 0.05));
        assert!(qp.ensure_converged(&OrbitalSet::new(vec![0], 2).unwrap()).is_err());
    }

    #[test]
    fn static_symmetrize_collapses() {
        let eval = |w: f64| Ok(DMatrix::from_fn(2, 2, |i, j| Complex64::new(w + (i + j) as f64, w)));
        let s = static_symmetrize(eval, &[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(s[(0, 1)], 1.5);
        assert_eq!(s[(0, 0)], 0.5);
        let s = static_symmetrize(eval, &[0.0, 1.0], &[0, 1]).unwrap();
        assert_eq!(s[(1, 1)], 3.0);
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }
}
