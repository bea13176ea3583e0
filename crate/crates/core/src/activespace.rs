//! Localization factors and active-space selection.

use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};
use crate::greens::OrbitalSet;
use crate::meanfield::MeanFieldSolution;

pub const DEFAULT_THRESHOLD: f64 = 0.05;

/// Orbital character used to label excitations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Character {
    Defect,
    Valence,
    Conduction,
}

impl std::fmt::Display for Character {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Character::Defect => write!(f, "defect"),
            Character::Valence => write!(f, "valence"),
            Character::Conduction => write!(f, "conduction"),
        }
    }
}

/// `L_V = Σ_{site ∈ V} |C_site,MO|²` for every MO.
pub fn localization_factor(sol: &MeanFieldSolution, region: &[usize]) -> Result<Vec<f64>> {
    if region.is_empty() {
        return Err(QdetError::EmptyRegion);
    }
    let n = sol.n_orb();
    if let Some(&s) = region.iter().find(|&&s| s >= n) {
        return Err(QdetError::InvalidOrbitalSet(format!("site {s} outside {n} sites")));
    }
    let mut sites = region.to_vec();
    sites.sort_unstable();
    sites.dedup();
    Ok((0..n)
        .map(|mo| {
            let l: f64 = sites.iter().map(|&s| sol.coeffs[(s, mo)].powi(2)).sum();
            l.clamp(0.0, 1.0)
        })
        .collect())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(QdetError::InvalidThreshold(threshold));
    }
    Ok(())
}

/// Orbitals with `L_V ≥ threshold`.
pub fn select_active(values: &[f64], threshold: f64) -> Result<OrbitalSet> {
    check_threshold(threshold)?;
    let picked: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= threshold).collect();
    if picked.is_empty() {
        return Err(QdetError::EmptySelection { threshold });
    }
    OrbitalSet::new(picked, values.len())
}

/// Defect for members of the selected set; otherwise valence or conduction
/// by position relative to the Fermi level (HOMO/LUMO midpoint).
pub fn characters(sol: &MeanFieldSolution, defect: &OrbitalSet) -> Vec<Character> {
    (0..sol.n_orb())
        .map(|i| {
            if defect.contains(i) {
                Character::Defect
            } else if sol.energies[i] < sol.fermi_level {
                Character::Valence
            } else {
                Character::Conduction
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEntry {
    pub orbital: usize,
    pub l_v: f64,
    /// Orbital energy relative to the HOMO (Hartree).
    pub energy_rel_homo: f64,
    pub selected: bool,
    pub character: Character,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub threshold: f64,
    pub region: Vec<usize>,
    pub entries: Vec<LocalizationEntry>,
}

impl LocalizationReport {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.l_v).collect()
    }

    pub fn selected(&self) -> Result<OrbitalSet> {
        select_active(&self.values(), self.threshold)
    }
}

pub fn localization_report(sol: &MeanFieldSolution, region: &[usize], threshold: f64) -> Result<LocalizationReport> {
    check_threshold(threshold)?;
    let values = localization_factor(sol, region)?;
    let selected: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= threshold).collect();
    let set = OrbitalSet::new(selected, values.len())?;
    let chars = characters(sol, &set);
    let homo = sol.energies[sol.homo()];
    Ok(LocalizationReport {
        threshold,
        region: region.to_vec(),
        entries: values
            .iter()
            .enumerate()
            .map(|(i, &l_v)| LocalizationEntry {
                orbital: i,
                l_v,
                energy_rel_homo: sol.energies[i] - homo,
                selected: set.contains(i),
                character: chars[i],
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{solve_scf, MeanFieldMode, ScfOptions};
    use crate::model::random_model;

    fn solution() -> MeanFieldSolution {
        let m = random_model(5, 4, 2, 0.05, 9).unwrap();
        solve_scf(&m, MeanFieldMode::HartreeFock, &ScfOptions::default()).unwrap()
    }

    #[test]
    fn all_sites_give_unit_factor() {
        let sol = solution();
        for l in localization_factor(&sol, &[0, 1, 2, 3, 4]).unwrap() {
            assert!((l - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn region_and_complement_sum_to_one() {
        let sol = solution();
        let a = localization_factor(&sol, &[0, 3]).unwrap();
        let b = localization_factor(&sol, &[1, 2, 4]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x + y - 1.0).abs() < 1e-12);
        }
        let hand: f64 = sol.coeffs[(0, 2)].powi(2) + sol.coeffs[(3, 2)].powi(2);
        assert_eq!(a[2], hand);
    }

    #[test]
    fn selection_rules() {
        let values = [0.9, 0.04, 0.05, 0.2];
        assert_eq!(select_active(&values, 0.05).unwrap().indices(), &[0, 2, 3]);
        assert_eq!(select_active(&values, 1e-9).unwrap().len(), 4);
        assert!(matches!(select_active(&values, 1.0 + 1e-9), Err(QdetError::InvalidThreshold(_))));
        assert!(matches!(select_active(&values, 0.95), Err(QdetError::EmptySelection { .. })));
        assert!(matches!(localization_factor(&solution(), &[]), Err(QdetError::EmptyRegion)));
    }
}
