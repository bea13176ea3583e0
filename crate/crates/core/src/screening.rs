//! RPA screening in the MO pair basis.
//!
//! Pair operators live on ordered MO pairs `(p, q)` (index `p * n + q`).
//! Polarizabilities are stored as expansion coefficients of
//! `P(x, x') = Σ φ_pq(x) P[(p,q),(r,s)] φ_rs(x')`, swap-symmetrized over
//! `(p,q) ↔ (q,p)`, while interactions are stored as matrix elements. With
//! this split every product `v P v`, `P v χ`, ... is a plain matrix product
//! over ordered pairs. The response is spin-summed (closed shell).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};
use crate::greens::{OrbitalSet, Subspace};
use crate::meanfield::MeanFieldSolution;
use crate::tensor::{pair_index, swap_symmetrize, symmetry_images, Tensor4};

/// Spin degeneracy of a closed-shell density response.
pub const SPIN_FACTOR: f64 = 2.0;

/// Frequency argument of a response function. `Static` is ω = 0 without
/// broadening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency {
    Static,
    At { omega: Complex64, eta: f64 },
}

impl Frequency {
    pub fn at(omega: Complex64, eta: f64) -> Self {
        Frequency::At { omega, eta }
    }

    /// Imaginary-axis point `iν` (no broadening needed).
    pub fn imaginary(nu: f64) -> Self {
        Frequency::At {
            omega: Complex64::new(0.0, nu),
            eta: 0.0,
        }
    }

    pub fn omega(&self) -> Complex64 {
        match self {
            Frequency::Static => Complex64::new(0.0, 0.0),
            Frequency::At { omega, .. } => *omega,
        }
    }

    pub fn eta(&self) -> f64 {
        match self {
            Frequency::Static => 0.0,
            Frequency::At { eta, .. } => *eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOperator {
    n: usize,
    pub matrix: DMatrix<Complex64>,
    pub frequency: Frequency,
}

impl PairOperator {
    pub fn zeros(n: usize, frequency: Frequency) -> Self {
        PairOperator {
            n,
            matrix: DMatrix::zeros(n * n, n * n),
            frequency,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn element(&self, p: usize, q: usize, r: usize, s: usize) -> Complex64 {
        self.matrix[(pair_index(self.n, p, q), pair_index(self.n, r, s))]
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &PairOperator) -> f64 {
        (&self.matrix - &other.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Keeps only elements whose four orbital legs all lie in `a`.
    pub fn project(&self, a: &OrbitalSet) -> PairOperator {
        let n = self.n;
        let mask = a.mask();
        let mut out = self.clone();
        for r in 0..n * n {
            for c in 0..n * n {
                let keep = mask[r / n] && mask[r % n] && mask[c / n] && mask[c % n];
                if !keep {
                    out.matrix[(r, c)] = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.matrix.map(|z| z.re)
    }
}

fn transition_included(variant: Subspace<'_>, i: usize, a: usize) -> bool {
    match variant {
        Subspace::Full => true,
        Subspace::Active(set) => set.contains(i) && set.contains(a),
        Subspace::Reduced(set) => !(set.contains(i) && set.contains(a)),
    }
}

fn check_denominator(z: Complex64) -> Result<Complex64> {
    if z.norm() == 0.0 {
        return Err(QdetError::PoleHit { omega: z.to_string() });
    }
    Ok(z.inv())
}

/// `1/(ω - Δ + iη) - 1/(ω + Δ - iη)` for one occupied-virtual transition.
fn transition_response(omega: Complex64, eta: f64, delta: f64) -> Result<Complex64> {
    let ieta = Complex64::new(0.0, eta);
    Ok(check_denominator(omega - delta + ieta)? - check_denominator(omega + delta - ieta)?)
}

/// Irreducible RPA polarizability from the sum over occupied-virtual MO
/// transitions. The active variant keeps transitions with both MOs in the
/// active set; the reduced variant keeps the rest.
pub fn polarizability(sol: &MeanFieldSolution, freq: Frequency, variant: Subspace<'_>) -> Result<PairOperator> {
    let n = sol.n_orb();
    let (omega, eta) = (freq.omega(), freq.eta());
    let mut out = PairOperator::zeros(n, freq);
    for i in (0..n).filter(|&k| sol.is_occupied(k)) {
        for a in (0..n).filter(|&k| !sol.is_occupied(k)) {
            if !transition_included(variant, i, a) {
                continue;
            }
            let delta = sol.energies[a] - sol.energies[i];
            let value = transition_response(omega, eta, delta)? * (SPIN_FACTOR / 4.0);
            let pairs = [pair_index(n, i, a), pair_index(n, a, i)];
            for &r in &pairs {
                for &c in &pairs {
                    out.matrix[(r, c)] += value;
                }
            }
        }
    }
    Ok(out)
}

/// `-i ∫ dω'/2π G_k(ω + ω') G_l(ω')` by residues. Each Green's function
/// carries half the broadening so that a transition carries `η`. Which
/// half-plane a pole sits in is fixed by the occupation (time ordering),
/// and the closed form is then continued to complex `ω`.
fn gg_convolution(sol: &MeanFieldSolution, k: usize, l: usize, omega: Complex64, eta: f64) -> Result<Complex64> {
    let half = 0.5 * eta;
    let occ_k = sol.is_occupied(k);
    let occ_l = sol.is_occupied(l);
    if occ_k == occ_l {
        // Both poles on the same side: closing the contour away from them.
        return Ok(Complex64::new(0.0, 0.0));
    }
    // Pole of G_k(ω + ω') in ω', and of G_l(ω').
    let sign = |occ: bool| if occ { -1.0 } else { 1.0 };
    let p1 = Complex64::new(sol.energies[k], -half * sign(occ_k)) - omega;
    let p2 = Complex64::new(sol.energies[l], -half * sign(occ_l));
    // Close in the upper half plane: (-i/2π)·2πi·1/(p_up - p_down).
    let (up, down) = if occ_l { (p2, p1) } else { (p1, p2) };
    check_denominator(up - down)
}

fn convolve(
    sol: &MeanFieldSolution,
    freq: Frequency,
    left: Subspace<'_>,
    right: Subspace<'_>,
    out: &mut DMatrix<Complex64>,
) -> Result<()> {
    let n = sol.n_orb();
    for k in (0..n).filter(|&k| left.includes(k)) {
        for l in (0..n).filter(|&l| right.includes(l)) {
            let g = gg_convolution(sol, k, l, freq.omega(), freq.eta())?;
            if g != Complex64::new(0.0, 0.0) {
                let p = pair_index(n, k, l);
                out[(p, p)] += g * SPIN_FACTOR;
            }
        }
    }
    Ok(())
}

/// Polarizability as the frequency convolution `-i G0 G0` of two mean-field
/// Green's functions: full `G0 G0`, active `G0^A G0^A`, and reduced
/// `G0^A G0^R + G0^R G0^A + G0^R G0^R`.
pub fn polarizability_from_g(sol: &MeanFieldSolution, freq: Frequency, variant: Subspace<'_>) -> Result<PairOperator> {
    let n = sol.n_orb();
    let mut raw = DMatrix::zeros(n * n, n * n);
    match variant {
        Subspace::Full => convolve(sol, freq, Subspace::Full, Subspace::Full, &mut raw)?,
        Subspace::Active(a) => convolve(sol, freq, Subspace::Active(a), Subspace::Active(a), &mut raw)?,
        Subspace::Reduced(a) => {
            convolve(sol, freq, Subspace::Active(a), Subspace::Reduced(a), &mut raw)?;
            convolve(sol, freq, Subspace::Reduced(a), Subspace::Active(a), &mut raw)?;
            convolve(sol, freq, Subspace::Reduced(a), Subspace::Reduced(a), &mut raw)?;
        }
    }
    Ok(PairOperator {
        n,
        matrix: swap_symmetrize(n, &raw),
        frequency: freq,
    })
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn smallest_singular_value(m: &DMatrix<Complex64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Solves `(1 - A B) X = C` for complex pair matrices.
fn dyson_solve(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>, c: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let dim = a.nrows();
    let lhs = DMatrix::<Complex64>::identity(dim, dim) - a * b;
    match lhs.clone().lu().solve(c) {
        Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => Ok(x),
        _ => Err(QdetError::RpaInstability {
            singular_value: smallest_singular_value(&lhs),
        }),
    }
}

/// Reducible response `χ = (1 - P v)^{-1} P`, solved without inverting `v`.
pub fn reducible_chi(p: &PairOperator, v_pair: &DMatrix<f64>) -> Result<PairOperator> {
    let v = to_complex(v_pair);
    let chi = dyson_solve(&p.matrix, &v, &p.matrix)?;
    Ok(PairOperator {
        n: p.n,
        matrix: chi,
        frequency: p.frequency,
    })
}

/// `W = v + v χ v` at the frequency of `χ`.
pub fn screened_w(chi: &PairOperator, v_pair: &DMatrix<f64>) -> PairOperator {
    let v = to_complex(v_pair);
    PairOperator {
        n: chi.n,
        matrix: &v + &v * &chi.matrix * &v,
        frequency: chi.frequency,
    }
}

/// Averages every element over its eight symmetry images with a balanced
/// tree, so elements that already agree are reproduced bit for bit.
pub fn symmetrize_tensor(t: &Tensor4) -> Tensor4 {
    let n = t.n();
    let mut out = Tensor4::zeros(n);
    let avg = |a: f64, b: f64| 0.5 * (a + b);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let x: Vec<f64> = symmetry_images(i, j, k, l)
                        .iter()
                        .map(|&(a, b, c, d)| t.get(a, b, c, d))
                        .collect();
                    let v = avg(avg(avg(x[0], x[1]), avg(x[2], x[3])), avg(avg(x[4], x[5]), avg(x[6], x[7])));
                    out.set(i, j, k, l, v);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrMethod {
    /// `W = v + v P^R W`, solved as `(1 - v P^R) W = v`.
    Dyson,
    /// `W = v + v χ^R v` with `χ^R = (1 - P^R v)^{-1} P^R`.
    Direct,
}

/// Static partially screened interaction `W0^R(ω = 0)` over all MOs,
/// screened by the reduced polarizability `P0^R = P0 - P0^A`.
pub fn partially_screened_wr(
    sol: &MeanFieldSolution,
    v_mo: &Tensor4,
    active: &OrbitalSet,
    method: WrMethod,
) -> Result<Tensor4> {
    let n = v_mo.n();
    let p = polarizability(sol, Frequency::Static, Subspace::Reduced(active))?;
    if p.max_abs() == 0.0 {
        return Ok(v_mo.clone());
    }
    let pr = to_complex(&p.real_part());
    let v = to_complex(&v_mo.pair_matrix());
    let w = match method {
        WrMethod::Dyson => dyson_solve(&v, &pr, &v)?,
        WrMethod::Direct => {
            let chi = dyson_solve(&pr, &v, &pr)?;
            &v + &v * chi * &v
        }
    };
    Ok(symmetrize_tensor(&Tensor4::from_pair_matrix(n, &w.map(|z| z.re))))
}

/// One RPA screening eigenmode: `W^p(ω) ∋ w wᵀ (1/(ω - Ω + iη) - 1/(ω + Ω - iη))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningMode {
    pub energy: f64,
    /// `w[(p,q)] = Σ_ia v_(pq),(ia) X_ia`, length `n²`.
    pub vector: Vec<f64>,
}

impl ScreeningMode {
    pub fn residue_norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum()
    }
}

/// Pole representation of `W^p = W0 - v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleRepresentation {
    pub n: usize,
    pub modes: Vec<ScreeningMode>,
    /// Number of modes before any truncation.
    pub total_modes: usize,
}

impl PoleRepresentation {
    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    /// Frequency factor of mode `s` at `ω`.
    fn factor(energy: f64, omega: Complex64, eta: f64) -> Complex64 {
        let ieta = Complex64::new(0.0, eta);
        (omega - energy + ieta).inv() - (omega + energy - ieta).inv()
    }

    /// Full `n² × n²` matrix of `W^p(ω)`.
    pub fn evaluate(&self, omega: Complex64, eta: f64) -> DMatrix<Complex64> {
        let np = self.n * self.n;
        let mut out = DMatrix::zeros(np, np);
        for mode in &self.modes {
            let f = Self::factor(mode.energy, omega, eta);
            let w = DVector::from_column_slice(&mode.vector);
            out += (&w * w.transpose()).map(|x| f * x);
        }
        out
    }

    /// Static `W^p(0) = -Σ_s 2 w_s w_sᵀ / Ω_s`.
    pub fn static_matrix(&self) -> DMatrix<f64> {
        let np = self.n * self.n;
        let mut out = DMatrix::zeros(np, np);
        for mode in &self.modes {
            let w = DVector::from_column_slice(&mode.vector);
            out -= (&w * w.transpose()) * (2.0 / mode.energy);
        }
        out
    }

    /// Keeps the `rank` modes with the largest residue norm.
    pub fn truncate(&self, rank: usize) -> Result<PoleRepresentation> {
        truncate_rank(self, rank)
    }
}

/// RPA eigenmodes over occupied-virtual transitions selected by `variant`
/// (all transitions for the full `W0`). Solves the symmetric form
/// `Δ^{1/2}(Δ + 2·SPIN·K)Δ^{1/2} z = Ω² z` with `K_ia,jb = v_(ia),(jb)`.
pub fn rpa_modes_for(sol: &MeanFieldSolution, v_mo: &Tensor4, variant: Subspace<'_>) -> Result<PoleRepresentation> {
    let n = sol.n_orb();
    let mut transitions = Vec::new();
    for i in (0..n).filter(|&k| sol.is_occupied(k)) {
        for a in (0..n).filter(|&k| !sol.is_occupied(k)) {
            if transition_included(variant, i, a) {
                transitions.push((i, a, sol.energies[a] - sol.energies[i]));
            }
        }
    }
    let dim = transitions.len();
    if dim == 0 {
        return Ok(PoleRepresentation {
            n,
            modes: Vec::new(),
            total_modes: 0,
        });
    }
    let sqrt_d: Vec<f64> = transitions.iter().map(|t| t.2.sqrt()).collect();
    let m = DMatrix::from_fn(dim, dim, |r, c| {
        let (i, a, d) = transitions[r];
        let (j, b, _) = transitions[c];
        let coupling = 2.0 * SPIN_FACTOR * sqrt_d[r] * v_mo.get(i, j, a, b) * sqrt_d[c];
        if r == c {
            d * d + coupling
        } else {
            coupling
        }
    });
    let eig = SymmetricEigen::new((&m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
    let mut modes = Vec::with_capacity(dim);
    for s in order {
        let omega_sq = eig.eigenvalues[s];
        if omega_sq <= 0.0 {
            return Err(QdetError::NegativeRpaEigenvalue { omega_squared: omega_sq });
        }
        let omega = omega_sq.sqrt();
        let scale = (SPIN_FACTOR / omega).sqrt();
        let x: Vec<f64> = (0..dim).map(|r| scale * sqrt_d[r] * eig.eigenvectors[(r, s)]).collect();
        let mut w = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                let mut acc = 0.0;
                for (t, &(i, a, _)) in transitions.iter().enumerate() {
                    acc += v_mo.get(p, i, q, a) * x[t];
                }
                w[pair_index(n, p, q)] = acc;
            }
        }
        modes.push(ScreeningMode {
            energy: omega,
            vector: w,
        });
    }
    Ok(PoleRepresentation {
        n,
        total_modes: modes.len(),
        modes,
    })
}

/// Screening modes of the full `W0`.
pub fn rpa_modes(sol: &MeanFieldSolution, v_mo: &Tensor4) -> Result<PoleRepresentation> {
    rpa_modes_for(sol, v_mo, Subspace::Full)
}

/// Keeps the `rank` modes with the largest residue norm (ties broken by
/// mode order); the kept modes stay in their original order.
pub fn truncate_rank(modes: &PoleRepresentation, rank: usize) -> Result<PoleRepresentation> {
    let total = modes.modes.len();
    if rank == 0 || rank > total {
        return Err(QdetError::RankOutOfRange { rank, max: total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        modes.modes[b]
            .residue_norm()
            .partial_cmp(&modes.modes[a].residue_norm())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = order[..rank].to_vec();
    keep.sort_unstable();
    Ok(PoleRepresentation {
        n: modes.n,
        modes: keep.iter().map(|&s| modes.modes[s].clone()).collect(),
        total_modes: modes.total_modes,
    })
}

/// Static and dynamic screened interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenedInteraction {
    pub static_tensor: Tensor4,
    pub poles: PoleRepresentation,
    pub rank: usize,
}

impl ScreenedInteraction {
    /// `W0(0) = v + W^p(0)` plus the pole table.
    pub fn from_modes(v_mo: &Tensor4, poles: PoleRepresentation) -> Self {
        let n = v_mo.n();
        let w = v_mo.pair_matrix() + poles.static_matrix();
        ScreenedInteraction {
            static_tensor: symmetrize_tensor(&Tensor4::from_pair_matrix(n, &w)),
            rank: poles.rank(),
            poles,
        }
    }
}

/// Frobenius norm of `W^p_full(ω) - W^p_truncated(ω)`.
pub fn reconstruction_error(full: &PoleRepresentation, truncated: &PoleRepresentation, omega: Complex64, eta: f64) -> f64 {
    (full.evaluate(omega, eta) - truncated.evaluate(omega, eta)).norm()
}
