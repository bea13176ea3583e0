//! Dense 4-index interaction tensors.
//!
//! Elements are stored as `v[i][j][k][l]` in row-major order with the
//! pairing convention `v_ijkl = ∫ ζ_i(x) ζ_k(x) W(x, x') ζ_j(x') ζ_l(x')`:
//! the first density is carried by `(i, k)` and the second by `(j, l)`.
//! For real orbitals this is the physicists' `<ij|kl>` bracket.
//!
//! The pair (product) basis indexes ordered orbital pairs `(p, q)` as
//! `p * n + q`. Viewed as a pair matrix, `V[(i,k),(j,l)] = v_ijkl`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};

pub const TENSOR_LAYOUT: &str = "row-major v[((i*n + j)*n + k)*n + l]; v_ijkl pairs densities (i,k) and (j,l) (physicists' <ij|kl>)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    n: usize,
    data: Vec<f64>,
}

#[inline]
pub fn pair_index(n: usize, p: usize, q: usize) -> usize {
    p * n + q
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Tensor4 {
            n,
            data: vec![0.0; n * n * n * n],
        }
    }

    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * n * n {
            return Err(QdetError::InvalidModel(format!(
                "tensor data has {} entries, expected {}",
                data.len(),
                n * n * n * n
            )));
        }
        Ok(Tensor4 { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.n + j) * self.n + k) * self.n + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.offset(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        let o = self.offset(i, j, k, l);
        self.data[o] = value;
    }

    /// Bounds-checked element access.
    pub fn element(&self, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
        let n = self.n;
        if i >= n || j >= n || k >= n || l >= n {
            return Err(QdetError::IndexOutOfRange { i, j, k, l, n });
        }
        Ok(self.get(i, j, k, l))
    }

    /// Sets `v_ijkl` and all of its symmetry images.
    pub fn set_symmetric(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        for (a, b, c, d) in symmetry_images(i, j, k, l) {
            self.set(a, b, c, d, value);
        }
    }

    /// Largest deviation between an element and any of its eight images.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = self.get(i, j, k, l);
                        for (a, b, c, d) in symmetry_images(i, j, k, l) {
                            worst = worst.max((v - self.get(a, b, c, d)).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    /// Pair-matrix view, rows `(i,k)` and columns `(j,l)`.
    pub fn pair_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let np = n * n;
        DMatrix::from_fn(np, np, |r, c| {
            let (i, k) = (r / n, r % n);
            let (j, l) = (c / n, c % n);
            self.get(i, j, k, l)
        })
    }

    pub fn from_pair_matrix(n: usize, m: &DMatrix<f64>) -> Self {
        let mut t = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = m[(pair_index(n, i, k), pair_index(n, j, l))];
                        t.set(i, j, k, l, v);
                    }
                }
            }
        }
        t
    }

    /// Smallest eigenvalue of the (symmetrized) pair matrix.
    pub fn psd_margin(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let m = self.pair_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Rotates every index by the columns of `c`:
    /// `v'_pqrs = Σ c_ip c_jq c_kr c_ls v_ijkl`.
    pub fn transform(&self, c: &DMatrix<f64>) -> Tensor4 {
        let n = self.n;
        let m = c.ncols();
        assert_eq!(c.nrows(), n, "coefficient rows must match tensor dimension");
        // Quarter transformations, one index at a time.
        let mut cur = self.data.clone();
        let mut dims = [n, n, n, n];
        for axis in 0..4 {
            let mut out_dims = dims;
            out_dims[axis] = m;
            let mut out = vec![0.0; out_dims.iter().product()];
            let stride = |d: &[usize; 4], a: usize| -> usize { d[a + 1..].iter().product() };
            let in_stride = stride(&dims, axis);
            let out_stride = stride(&out_dims, axis);
            let outer: usize = dims[..axis].iter().product();
            for o in 0..outer {
                for inner in 0..in_stride {
                    for p in 0..m {
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += c[(i, p)] * cur[(o * n + i) * in_stride + inner];
                        }
                        out[(o * m + p) * out_stride + inner] = acc;
                    }
                }
            }
            cur = out;
            dims = out_dims;
        }
        Tensor4 { n: m, data: cur }
    }

    /// Sub-tensor over the listed orbitals, in the listed order.
    pub fn restrict(&self, idx: &[usize]) -> Tensor4 {
        let m = idx.len();
        let mut t = Tensor4::zeros(m);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                for (c, &k) in idx.iter().enumerate() {
                    for (d, &l) in idx.iter().enumerate() {
                        t.set(a, b, c, d, self.get(i, j, k, l));
                    }
                }
            }
        }
        t
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Nonzero elements with canonical indices: `(i,k)` ≤ `(j,l)` as pairs,
    /// `i ≤ k`, `j ≤ l`. Every element is recovered from its image list.
    pub fn canonical_entries(&self, cutoff: f64) -> Vec<([usize; 4], f64)> {
        let n = self.n;
        let mut out = Vec::new();
        for i in 0..n {
            for k in i..n {
                for j in 0..n {
                    for l in j..n {
                        if pair_index(n, i, k) > pair_index(n, j, l) {
                            continue;
                        }
                        let v = self.get(i, j, k, l);
                        if v.abs() > cutoff {
                            out.push(([i, j, k, l], v));
                        }
                    }
                }
            }
        }
        out
    }
}

/// The eight index permutations under which a real interaction is invariant:
/// swap within pair (i,k), within pair (j,l), and exchange the pairs.
pub fn symmetry_images(i: usize, j: usize, k: usize, l: usize) -> [(usize, usize, usize, usize); 8] {
    [
        (i, j, k, l),
        (k, j, i, l),
        (i, l, k, j),
        (k, l, i, j),
        (j, i, l, k),
        (l, i, j, k),
        (j, k, l, i),
        (l, k, j, i),
    ]
}

/// Swap-symmetrizes a pair matrix: averages each element over the four
/// orderings `(p,q)/(q,p)` of its row and column pairs.
pub fn swap_symmetrize<T>(n: usize, m: &DMatrix<T>) -> DMatrix<T>
where
    T: nalgebra::ComplexField<RealField = f64> + Copy,
{
    let np = n * n;
    let quarter = T::from_real(0.25);
    DMatrix::from_fn(np, np, |r, c| {
        let (p, q) = (r / n, r % n);
        let (s, t) = (c / n, c % n);
        let rs = pair_index(n, q, p);
        let cs = pair_index(n, t, s);
        (m[(r, c)] + m[(rs, c)] + m[(r, cs)] + m[(rs, cs)]) * quarter
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> Tensor4 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        t.set_symmetric(i, j, k, l, rng.gen_range(-1.0..1.0));
                    }
                }
            }
        }
        t
    }

    #[test]
    fn set_symmetric_fills_all_images() {
        let mut t = Tensor4::zeros(3);
        t.set_symmetric(0, 1, 2, 1, 0.7);
        for (a, b, c, d) in symmetry_images(0, 1, 2, 1) {
            assert_eq!(t.get(a, b, c, d), 0.7);
        }
        assert_eq!(t.symmetry_residual(), 0.0);
    }

    #[test]
    fn element_out_of_range_is_an_error() {
        let t = Tensor4::zeros(2);
        assert!(matches!(
            t.element(0, 0, 2, 0),
            Err(QdetError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn pair_matrix_round_trip() {
        let t = random_symmetric(3, 7);
        let back = Tensor4::from_pair_matrix(3, &t.pair_matrix());
        assert_eq!(t, back);
    }

    #[test]
    fn transform_matches_brute_force() {
        let n = 3;
        let t = random_symmetric(n, 11);
        let c = DMatrix::from_fn(n, 2, |i, p| ((i + 2 * p) as f64 * 0.37).sin());
        let fast = t.transform(&c);
        for p in 0..2 {
            for q in 0..2 {
                for r in 0..2 {
                    for s in 0..2 {
                        let mut acc = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                for k in 0..n {
                                    for l in 0..n {
                                        acc += c[(i, p)] * c[(j, q)] * c[(k, r)] * c[(l, s)] * t.get(i, j, k, l);
                                    }
                                }
                            }
                        }
                        assert!((fast.get(p, q, r, s) - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn canonical_entries_cover_every_element() {
        let t = random_symmetric(3, 5);
        let mut rebuilt = Tensor4::zeros(3);
        for ([i, j, k, l], v) in t.canonical_entries(0.0) {
            rebuilt.set_symmetric(i, j, k, l, v);
        }
        assert_eq!(rebuilt, t);
    }
}
