//! Full configuration interaction for a one- plus two-body Hamiltonian
//! `H = Σ t_ij a†_iσ a_jσ + ½ Σ v_ijkl a†_iσ a†_jτ a_lτ a_kσ`.
//!
//! Determinants are pairs of occupation bitstrings `(up, down)`; spin
//! orbitals are numbered alpha first (`p`) then beta (`n + p`) when a
//! single combined bitstring is needed.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activespace::Character;
use crate::error::{QdetError, Result};
use crate::tensor::Tensor4;
use crate::HARTREE_TO_EV;

pub const DEFAULT_DIMENSION_CAP: usize = 200_000;
pub const DENSE_LIMIT: usize = 4000;
/// Eigenvalues closer than this are treated as one degenerate level when
/// spin-adapting eigenvectors.
pub const DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DeterminantSpace {
    pub n_orb: usize,
    pub n_up: usize,
    pub n_down: usize,
    pub dets: Vec<(u64, u64)>,
    index: HashMap<(u64, u64), usize>,
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc.min(usize::MAX as u128) as usize
}

/// All `n`-bit strings with `k` bits set, ascending.
fn strings(n: usize, k: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(binomial(n, k));
    if k == 0 {
        out.push(0);
        return out;
    }
    // Gosper's hack enumerates combinations in increasing numeric order.
    let mut x: u64 = (1u64 << k) - 1;
    let limit: u64 = 1u64 << n;
    while x < limit {
        out.push(x);
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
    out
}

pub fn enumerate_space(n_orb: usize, n_up: usize, n_down: usize, cap: usize) -> Result<DeterminantSpace> {
    if n_orb == 0 || n_orb > 32 {
        return Err(QdetError::InvalidSpace(format!("{n_orb} orbitals (supported: 1..=32)")));
    }
    if n_up > n_orb || n_down > n_orb {
        return Err(QdetError::InvalidSpace(format!(
            "{n_up} up / {n_down} down electrons in {n_orb} orbitals"
        )));
    }
    let dim = binomial(n_orb, n_up).saturating_mul(binomial(n_orb, n_down));
    if dim > cap {
        return Err(QdetError::SpaceTooLarge { dim, cap });
    }
    let ups = strings(n_orb, n_up);
    let downs = strings(n_orb, n_down);
    let mut dets = Vec::with_capacity(dim);
    for &u in &ups {
        for &d in &downs {
            dets.push((u, d));
        }
    }
    let index = dets.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    Ok(DeterminantSpace {
        n_orb,
        n_up,
        n_down,
        dets,
        index,
    })
}

impl DeterminantSpace {
    pub fn dim(&self) -> usize {
        self.dets.len()
    }

    pub fn position(&self, det: (u64, u64)) -> Option<usize> {
        self.index.get(&det).copied()
    }

    pub fn combined(&self, det: (u64, u64)) -> u64 {
        det.0 | (det.1 << self.n_orb)
    }

    pub fn split(&self, bits: u64) -> (u64, u64) {
        let mask = (1u64 << self.n_orb) - 1;
        (bits & mask, bits >> self.n_orb)
    }

    /// Occupation string, one character per orbital: `2`, `u`, `d` or `0`.
    pub fn label(&self, det: (u64, u64)) -> String {
        (0..self.n_orb)
            .map(|p| match ((det.0 >> p) & 1, (det.1 >> p) & 1) {
                (1, 1) => '2',
                (1, 0) => 'u',
                (0, 1) => 'd',
                _ => '0',
            })
            .collect()
    }
}

/// Fermionic sign of moving an operator past the occupied spin orbitals
/// below `p`.
#[inline]
fn parity(bits: u64, p: usize) -> f64 {
    if (bits & ((1u64 << p) - 1)).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `a_p |bits>`.
#[inline]
pub fn annihilate(bits: u64, p: usize) -> Option<(u64, f64)> {
    if bits >> p & 1 == 0 {
        return None;
    }
    Some((bits & !(1u64 << p), parity(bits, p)))
}

/// `a†_p |bits>`.
#[inline]
pub fn create(bits: u64, p: usize) -> Option<(u64, f64)> {
    if bits >> p & 1 == 1 {
        return None;
    }
    Some((bits | (1u64 << p), parity(bits, p)))
}

/// Row-sparse symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let y: Vec<f64> = self
            .rows
            .par_iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect();
        DVector::from_vec(y)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| row.iter().filter(|e| e.0 == r).map(|e| e.1).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] += v;
            }
        }
        m
    }
}

struct SpinOrbitalIntegrals<'a> {
    n: usize,
    t: &'a DMatrix<f64>,
    v: &'a Tensor4,
}

impl SpinOrbitalIntegrals<'_> {
    #[inline]
    fn h(&self, p: usize, q: usize) -> f64 {
        if p / self.n != q / self.n {
            return 0.0;
        }
        self.t[(p % self.n, q % self.n)]
    }

    /// `<PQ|RS>` with `P,R` sharing the first coordinate.
    #[inline]
    fn direct(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n;
        if p / n != r / n || q / n != s / n {
            return 0.0;
        }
        self.v.get(p % n, q % n, r % n, s % n)
    }

    /// `<PQ||RS> = <PQ|RS> - <PQ|SR>`.
    #[inline]
    fn anti(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.direct(p, q, r, s) - self.direct(p, q, s, r)
    }
}

fn occupied(bits: u64, n_so: usize) -> Vec<usize> {
    (0..n_so).filter(|&p| bits >> p & 1 == 1).collect()
}

/// Slater-Condon matrix in the determinant space.
pub fn build_hamiltonian(t: &DMatrix<f64>, v: &Tensor4, space: &DeterminantSpace) -> Result<SparseMatrix> {
    let n = space.n_orb;
    if t.nrows() != n || t.ncols() != n || v.n() != n {
        return Err(QdetError::InvalidSpace(format!(
            "integrals of dimension {} / {} do not match {n} orbitals",
            t.nrows(),
            v.n()
        )));
    }
    let ints = SpinOrbitalIntegrals { n, t, v };
    let n_so = 2 * n;
    let rows: Vec<Vec<(usize, f64)>> = space
        .dets
        .par_iter()
        .map(|&det| {
            let bits = space.combined(det);
            let occ = occupied(bits, n_so);
            let virt: Vec<usize> = (0..n_so).filter(|&p| bits >> p & 1 == 0).collect();
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            let push = |target: u64, value: f64, row: &mut BTreeMap<usize, f64>| {
                if value != 0.0 {
                    if let Some(c) = space.position(space.split(target)) {
                        *row.entry(c).or_insert(0.0) += value;
                    }
                }
            };

            let mut diag = 0.0;
            for (a, &p) in occ.iter().enumerate() {
                diag += ints.h(p, p);
                for &q in &occ[a + 1..] {
                    diag += ints.anti(p, q, p, q);
                }
            }
            push(bits, diag, &mut row);

            for &p in &occ {
                for &r in &virt {
                    if p / n != r / n {
                        continue;
                    }
                    let (b1, s1) = annihilate(bits, p).unwrap();
                    let (b2, s2) = create(b1, r).unwrap();
                    let mut value = ints.h(r, p);
                    for &q in &occ {
                        if q != p {
                            value += ints.anti(r, q, p, q);
                        }
                    }
                    push(b2, s1 * s2 * value, &mut row);
                }
            }

            for (a, &p) in occ.iter().enumerate() {
                for &q in &occ[a + 1..] {
                    for (b, &r) in virt.iter().enumerate() {
                        for &s in &virt[b + 1..] {
                            let value = ints.anti(r, s, p, q);
                            if value == 0.0 {
                                continue;
                            }
                            let (b1, s1) = annihilate(bits, p).unwrap();
                            let (b2, s2) = annihilate(b1, q).unwrap();
                            let (b3, s3) = create(b2, s).unwrap();
                            let (b4, s4) = create(b3, r).unwrap();
                            push(b4, s1 * s2 * s3 * s4 * value, &mut row);
                        }
                    }
                }
            }
            row.into_iter().collect()
        })
        .collect();
    Ok(SparseMatrix { dim: space.dim(), rows })
}

/// `S+ ψ` as a map from combined bitstrings to amplitudes.
fn s_plus(space: &DeterminantSpace, psi: &DVector<f64>) -> BTreeMap<u64, f64> {
    let n = space.n_orb;
    let mut out = BTreeMap::new();
    for (i, &det) in space.dets.iter().enumerate() {
        let c = psi[i];
        if c == 0.0 {
            continue;
        }
        let bits = space.combined(det);
        for p in 0..n {
            if let Some((b1, s1)) = annihilate(bits, n + p) {
                if let Some((b2, s2)) = create(b1, p) {
                    *out.entry(b2).or_insert(0.0) += s1 * s2 * c;
                }
            }
        }
    }
    out
}

fn overlap(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> f64 {
    a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum()
}

pub fn sz_of(space: &DeterminantSpace) -> f64 {
    0.5 * (space.n_up as f64 - space.n_down as f64)
}

/// `<ψ|S²|ψ> = |S+ ψ|² + Sz(Sz + 1)`.
pub fn s_squared(space: &DeterminantSpace, psi: &DVector<f64>) -> f64 {
    let sz = sz_of(space);
    let sp = s_plus(space, psi);
    overlap(&sp, &sp) + sz * (sz + 1.0)
}

/// Spin quantum number nearest to a measured `S²`.
pub fn spin_from_s2(s2: f64) -> f64 {
    let s = 0.5 * (-1.0 + (1.0 + 4.0 * s2.max(0.0)).sqrt());
    (2.0 * s).round() / 2.0
}

pub fn multiplicity_label(s: f64) -> String {
    match (2.0 * s).round() as i64 + 1 {
        1 => "singlet".into(),
        2 => "doublet".into(),
        3 => "triplet".into(),
        4 => "quartet".into(),
        5 => "quintet".into(),
        m => format!("{m}-plet"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FciOptions {
    pub n_states: usize,
    pub dimension_cap: usize,
    pub dense_limit: usize,
    pub davidson_tol: f64,
    pub davidson_max_iter: usize,
}

impl Default for FciOptions {
    fn default() -> Self {
        FciOptions {
            n_states: 6,
            dimension_cap: DEFAULT_DIMENSION_CAP,
            dense_limit: DENSE_LIMIT,
            davidson_tol: 1e-10,
            davidson_max_iter: 500,
        }
    }
}

fn dense_lowest(h: &SparseMatrix, k: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let m = h.to_dense();
    let eig = SymmetricEigen::try_new((&m + m.transpose()) * 0.5, f64::EPSILON, 0)
        .ok_or_else(|| QdetError::Eigensolver("dense symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..h.dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order[..k].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    Ok((values, vectors))
}

fn orthonormalize_against(v: &mut DVector<f64>, basis: &[DVector<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, 1.0);
        }
    }
    let norm = v.norm();
    if norm > 0.0 {
        *v /= norm;
    }
    norm
}

/// Block Davidson with diagonal preconditioning and full
/// reorthogonalization.
pub fn davidson(h: &SparseMatrix, k: usize, tol: f64, max_iter: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let dim = h.dim;
    let diag = h.diagonal();
    let block = (k + 2).min(dim);
    let max_sub = (8 * block).max(block + k + 1).min(dim);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| diag[a].partial_cmp(&diag[b]).unwrap().then(a.cmp(&b)));
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut images: Vec<DVector<f64>> = Vec::new();
    for &i in &order[..block] {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        images.push(h.matvec(&e));
        basis.push(e);
    }
    for _ in 0..max_iter {
        let m = basis.len();
        let t = DMatrix::from_fn(m, m, |a, b| basis[a].dot(&images[b]));
        let eig = SymmetricEigen::new((&t + t.transpose()) * 0.5);
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let kk = k.min(m);
        let mut thetas = Vec::with_capacity(kk);
        let mut ritz = Vec::with_capacity(kk);
        let mut ritz_images = Vec::with_capacity(kk);
        for &s in &idx[..kk] {
            let y = eig.eigenvectors.column(s);
            let mut x = DVector::zeros(dim);
            let mut ax = DVector::zeros(dim);
            for j in 0..m {
                x.axpy(y[j], &basis[j], 1.0);
                ax.axpy(y[j], &images[j], 1.0);
            }
            thetas.push(eig.eigenvalues[s]);
            ritz.push(x);
            ritz_images.push(ax);
        }
        let residuals: Vec<DVector<f64>> = (0..kk).map(|j| &ritz_images[j] - &ritz[j] * thetas[j]).collect();
        if kk == k && residuals.iter().all(|r| r.norm() < tol) {
            return Ok((thetas, ritz));
        }
        if m + kk > max_sub {
            // Restart from the current Ritz vectors.
            basis.clear();
            images.clear();
            for x in ritz.iter() {
                let mut x = x.clone();
                if orthonormalize_against(&mut x, &basis) > 1e-10 {
                    images.push(h.matvec(&x));
                    basis.push(x);
                }
            }
        }
        let mut added = 0;
        for j in 0..kk {
            if residuals[j].norm() < tol {
                continue;
            }
            let mut c = DVector::from_fn(dim, |i, _| {
                let d = thetas[j] - diag[i];
                let d = if d.abs() < 1e-8 { 1e-8_f64.copysign(d) } else { d };
                residuals[j][i] / d
            });
            if orthonormalize_against(&mut c, &basis) > 1e-10 {
                images.push(h.matvec(&c));
                basis.push(c);
                added += 1;
            }
        }
        if added == 0 {
            // Preconditioned corrections collapsed onto the subspace; fall
            // back to plain residuals.
            for r in &residuals {
                let mut c = r.clone();
                if orthonormalize_against(&mut c, &basis) > 1e-10 {
                    images.push(h.matvec(&c));
                    basis.push(c);
                    added += 1;
                }
            }
            if added == 0 {
                return Err(QdetError::Eigensolver("Davidson subspace stopped growing".into()));
            }
        }
    }
    Err(QdetError::Eigensolver(format!("Davidson did not converge in {max_iter} iterations")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominantConfig {
    pub occupation: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FciState {
    pub index: usize,
    pub energy: f64,
    pub excitation_ev: f64,
    pub s_squared: f64,
    pub spin: f64,
    pub multiplicity: String,
    pub dominant: Vec<DominantConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FciSpectrum {
    pub n_orb: usize,
    pub n_up: usize,
    pub n_down: usize,
    pub dimension: usize,
    pub states: Vec<FciState>,
    pub vectors: Vec<DVector<f64>>,
    /// Dominant determinant of each state.
    pub leading: Vec<(u64, u64)>,
}

impl FciSpectrum {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.energy).collect()
    }

    pub fn excitation_energies_ev(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.excitation_ev).collect()
    }

    pub fn sz(&self) -> f64 {
        0.5 * (self.n_up as f64 - self.n_down as f64)
    }
}

/// Rotates each degenerate cluster onto eigenvectors of `S²`.
fn spin_adapt(space: &DeterminantSpace, values: &[f64], vectors: &mut [DVector<f64>]) -> Vec<f64> {
    let sz = sz_of(space);
    let mut s2 = vec![0.0; values.len()];
    let mut start = 0;
    while start < values.len() {
        let mut end = start + 1;
        while end < values.len() && (values[end] - values[end - 1]).abs() < DEGENERACY_TOL {
            end += 1;
        }
        let maps: Vec<BTreeMap<u64, f64>> = vectors[start..end].iter().map(|v| s_plus(space, v)).collect();
        let m = end - start;
        let g = DMatrix::from_fn(m, m, |a, b| overlap(&maps[a], &maps[b]));
        if m == 1 {
            s2[start] = g[(0, 0)] + sz * (sz + 1.0);
        } else {
            let eig = SymmetricEigen::new((&g + g.transpose()) * 0.5);
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
            let old: Vec<DVector<f64>> = vectors[start..end].to_vec();
            for (slot, &s) in idx.iter().enumerate() {
                let mut x = DVector::zeros(old[0].len());
                for a in 0..m {
                    x.axpy(eig.eigenvectors[(a, s)], &old[a], 1.0);
                }
                vectors[start + slot] = x;
                s2[start + slot] = eig.eigenvalues[s] + sz * (sz + 1.0);
            }
        }
        start = end;
    }
    s2
}

/// Lowest eigenpairs of `H` in one `(n_up, n_down)` sector.
pub fn solve_spectrum(h: &SparseMatrix, space: &DeterminantSpace, opts: &FciOptions) -> Result<FciSpectrum> {
    let k = opts.n_states.min(space.dim()).max(1);
    let (values, mut vectors) = if space.dim() <= opts.dense_limit {
        dense_lowest(h, k)?
    } else {
        // Converge a few extra roots so degenerate partners at the edge of
        // the window are resolved too.
        let extra = (k + 4).min(space.dim());
        let (v, x) = davidson(h, extra, opts.davidson_tol, opts.davidson_max_iter)?;
        (v[..k].to_vec(), x[..k].to_vec())
    };
    for x in vectors.iter_mut() {
        // Deterministic sign: largest component positive.
        let imax = x.iamax();
        if x[imax] < 0.0 {
            x.neg_mut();
        }
    }
    let s2 = spin_adapt(space, &values, &mut vectors);
    let e0 = values[0];
    let mut states = Vec::with_capacity(k);
    let mut leading = Vec::with_capacity(k);
    for (i, x) in vectors.iter().enumerate() {
        let mut weights: Vec<(usize, f64)> = x.iter().enumerate().map(|(j, c)| (j, c * c)).collect();
        weights.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        leading.push(space.dets[weights[0].0]);
        let spin = spin_from_s2(s2[i]);
        states.push(FciState {
            index: i,
            energy: values[i],
            excitation_ev: (values[i] - e0) * HARTREE_TO_EV,
            s_squared: s2[i],
            spin,
            multiplicity: multiplicity_label(spin),
            dominant: weights
                .iter()
                .take(3)
                .map(|&(j, w)| DominantConfig {
                    occupation: space.label(space.dets[j]),
                    weight: w,
                })
                .collect(),
        });
    }
    Ok(FciSpectrum {
        n_orb: space.n_orb,
        n_up: space.n_up,
        n_down: space.n_down,
        dimension: space.dim(),
        states,
        vectors,
        leading,
    })
}

/// Enumerates, builds and solves in one sector.
pub fn fci(t: &DMatrix<f64>, v: &Tensor4, n_up: usize, n_down: usize, opts: &FciOptions) -> Result<FciSpectrum> {
    let space = enumerate_space(t.nrows(), n_up, n_down, opts.dimension_cap)?;
    let h = build_hamiltonian(t, v, &space)?;
    solve_spectrum(&h, &space, opts)
}

/// Sz = 0 (or ½) sector for `n_elec` electrons.
pub fn fci_ground_sector(t: &DMatrix<f64>, v: &Tensor4, n_elec: usize, opts: &FciOptions) -> Result<FciSpectrum> {
    let n_up = n_elec.div_ceil(2);
    fci(t, v, n_up, n_elec - n_up, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationLabel {
    pub state: usize,
    /// Active-space orbital positions emptied relative to the ground state.
    pub holes: Vec<usize>,
    pub particles: Vec<usize>,
    pub promotion: String,
    pub defect_to_defect: bool,
    pub cross_character: bool,
    pub ghost: bool,
}

fn spatial_changes(n: usize, from: (u64, u64), to: (u64, u64)) -> (Vec<usize>, Vec<usize>) {
    let mut holes = Vec::new();
    let mut particles = Vec::new();
    for (a, b) in [(from.0, to.0), (from.1, to.1)] {
        for p in 0..n {
            let (x, y) = ((a >> p) & 1, (b >> p) & 1);
            if x == 1 && y == 0 {
                holes.push(p);
            } else if x == 0 && y == 1 {
                particles.push(p);
            }
        }
    }
    holes.sort_unstable();
    particles.sort_unstable();
    (holes, particles)
}

fn describe(chars: &[Character], idx: &[usize]) -> String {
    let mut names: Vec<String> = idx.iter().map(|&i| chars[i].to_string()).collect();
    names.dedup();
    names.join("+")
}

/// Labels each excited state by its dominant promotion relative to the
/// ground-state determinant and flags cross-character excitations that lie
/// below the lowest defect→defect excitation.
pub fn classify_excitations(spec: &FciSpectrum, chars: &[Character]) -> Vec<ExcitationLabel> {
    let n = spec.n_orb;
    let ground = spec.leading[0];
    let mut labels: Vec<ExcitationLabel> = spec
        .leading
        .iter()
        .enumerate()
        .map(|(state, &det)| {
            let (holes, particles) = spatial_changes(n, ground, det);
            let involved: Vec<Character> = holes.iter().chain(&particles).map(|&p| chars[p]).collect();
            let none = holes.is_empty();
            let dd = !none && involved.iter().all(|c| *c == Character::Defect);
            ExcitationLabel {
                state,
                promotion: if state == 0 {
                    "ground".into()
                } else if none {
                    "none".into()
                } else {
                    format!("{}->{}", describe(chars, &holes), describe(chars, &particles))
                },
                holes,
                particles,
                defect_to_defect: state > 0 && dd,
                cross_character: state > 0 && !none && !dd,
                ghost: false,
            }
        })
        .collect();
    let lowest_dd = labels
        .iter()
        .filter(|l| l.defect_to_defect)
        .map(|l| spec.states[l.state].excitation_ev)
        .fold(f64::INFINITY, f64::min);
    for l in labels.iter_mut() {
        l.ghost = l.cross_character && spec.states[l.state].excitation_ev < lowest_dd;
    }
    labels
}
