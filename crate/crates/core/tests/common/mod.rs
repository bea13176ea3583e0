#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;

use qdet::embedding::GwReference;
use qdet::greens::OrbitalSet;
use qdet::meanfield::{solve_scf, MeanFieldMode, MeanFieldSolution, ScfOptions};
use qdet::model::{random_model, ModelSystem, Region};
use qdet::screening::rpa_modes;
use qdet::selfenergy::QpOptions;
use qdet::tensor::Tensor4;

pub const ETA: f64 = 1e-4;

pub fn demo_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml")
}

/// Interacting random models used across the checks: (n_orb, n_elec, seed).
pub const MODELS: [(usize, usize, u64); 6] = [(4, 2, 11), (4, 4, 12), (5, 4, 13), (6, 4, 14), (6, 6, 15), (8, 4, 16)];

pub fn model(n_orb: usize, n_elec: usize, seed: u64) -> ModelSystem {
    random_model(n_orb, n_elec, 3, 0.05, seed).unwrap()
}

pub fn scf(m: &ModelSystem, mode: MeanFieldMode) -> MeanFieldSolution {
    solve_scf(m, mode, &ScfOptions::default()).unwrap()
}

pub fn gw_reference(m: &ModelSystem, mode: MeanFieldMode) -> GwReference {
    let sol = scf(m, mode);
    let v = sol.mo_interaction(m);
    let poles = rpa_modes(&sol, &v).unwrap();
    GwReference::new(sol, v, poles, ETA, &QpOptions::default()).unwrap()
}

/// Random nonempty proper subset of `0..n`.
pub fn random_subset(n: usize, seed: u64) -> OrbitalSet {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let size = 1 + (seed as usize % (n - 1));
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng);
    OrbitalSet::new(all[..size].to_vec(), n).unwrap()
}

// Independent many-body oracle: explicit second quantization on
// interleaved spin orbitals (2p + σ), all determinants with the given
// (N↑, N↓), dense diagonalization.

fn apply_annihilate(state: u64, so: usize) -> Option<(u64, f64)> {
    if state >> so & 1 == 0 {
        return None;
    }
    let below = (state & ((1u64 << so) - 1)).count_ones();
    Some((state ^ (1u64 << so), if below.is_multiple_of(2) { 1.0 } else { -1.0 }))
}

fn apply_create(state: u64, so: usize) -> Option<(u64, f64)> {
    if state >> so & 1 == 1 {
        return None;
    }
    let below = (state & ((1u64 << so) - 1)).count_ones();
    Some((state | (1u64 << so), if below.is_multiple_of(2) { 1.0 } else { -1.0 }))
}

fn spin_counts(state: u64, n: usize) -> (usize, usize) {
    let (mut a, mut b) = (0, 0);
    for p in 0..n {
        a += (state >> (2 * p) & 1) as usize;
        b += (state >> (2 * p + 1) & 1) as usize;
    }
    (a, b)
}

/// `H = Σ t_pq a†_pσ a_qσ + ½ Σ v_pqrs a†_pσ a†_qτ a_sτ a_rσ` with `v_pqrs`
/// coupling densities (p,r) and (q,s).
pub fn brute_force_spectrum(t: &DMatrix<f64>, v: &Tensor4, n_up: usize, n_down: usize) -> Vec<f64> {
    let n = t.nrows();
    let basis: Vec<u64> = (0u64..1 << (2 * n))
        .filter(|&s| spin_counts(s, n) == (n_up, n_down))
        .collect();
    let index: HashMap<u64, usize> = basis.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let dim = basis.len();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for (col, &ket) in basis.iter().enumerate() {
        for p in 0..n {
            for q in 0..n {
                if t[(p, q)] == 0.0 {
                    continue;
                }
                for s in 0..2 {
                    let Some((x, s1)) = apply_annihilate(ket, 2 * q + s) else { continue };
                    let Some((y, s2)) = apply_create(x, 2 * p + s) else { continue };
                    h[(index[&y], col)] += t[(p, q)] * s1 * s2;
                }
            }
        }
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let val = v.get(p, q, r, s);
                        if val == 0.0 {
                            continue;
                        }
                        for sig in 0..2 {
                            for tau in 0..2 {
                                let Some((a, f1)) = apply_annihilate(ket, 2 * r + sig) else { continue };
                                let Some((b, f2)) = apply_annihilate(a, 2 * s + tau) else { continue };
                                let Some((c, f3)) = apply_create(b, 2 * q + tau) else { continue };
                                let Some((d, f4)) = apply_create(c, 2 * p + sig) else { continue };
                                h[(index[&d], col)] += 0.5 * val * f1 * f2 * f3 * f4;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut e: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().cloned().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

/// Model with two in-gap defect levels and one host conduction level
/// placed between them, so HOMO → conduction excitations fall below the
/// defect → defect ones. Sites: 0 valence, 1-2 defect dimer, 3 low
/// conduction, 4 high conduction.
pub fn ghost_model() -> ModelSystem {
    let n = 5;
    let mut h = DMatrix::zeros(n, n);
    let onsite = [-1.0, 0.0, 0.0, -0.04, 1.0];
    for i in 0..n {
        h[(i, i)] = onsite[i];
    }
    let mut bond = |i: usize, j: usize, x: f64| {
        h[(i, j)] = x;
        h[(j, i)] = x;
    };
    bond(1, 2, -0.15);
    bond(0, 1, -0.01);
    bond(2, 3, -0.01);
    bond(3, 4, -0.01);
    let mut v = Tensor4::zeros(n);
    for i in 0..n {
        v.set(i, i, i, i, 0.02);
    }
    let tags = vec![Region::Host, Region::Defect, Region::Defect, Region::Host, Region::Host];
    ModelSystem::new(h, v, 4, tags).unwrap()
}
