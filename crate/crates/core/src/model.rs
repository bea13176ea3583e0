//! Finite lattice models standing in for a defective supercell.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{QdetError, Result};
use crate::tensor::{Tensor4, TENSOR_LAYOUT};

/// Numerical floor for the smallest pair-matrix eigenvalue.
pub const PSD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Defect,
    Host,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSystem {
    pub n_orb: usize,
    pub h_core: DMatrix<f64>,
    pub v: Tensor4,
    pub n_elec: usize,
    pub region_tags: Vec<Region>,
    pub site_geometry: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeShape {
    Chain,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub shape: LatticeShape,
    /// Number of sites of a chain.
    #[serde(default)]
    pub sites: usize,
    #[serde(default)]
    pub nx: usize,
    #[serde(default)]
    pub ny: usize,
    pub hopping: f64,
    #[serde(default)]
    pub onsite: f64,
    /// `+Δ` on even sites and `-Δ` on odd sites (ionic lattice with a gap).
    #[serde(default)]
    pub staggered_onsite: f64,
    #[serde(default)]
    pub periodic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSpec {
    /// Onsite Hubbard-like repulsion of host sites.
    pub onsite_u: f64,
    /// Offsite density-density interaction `offsite_v / d`.
    #[serde(default)]
    pub offsite_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    pub sites: Vec<usize>,
    pub onsite_energy: f64,
    pub onsite_u: f64,
    /// Hopping on bonds between a defect site and a host site.
    #[serde(default)]
    pub hopping: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectronSpec {
    pub count: usize,
}

/// Model specification with the `lattice`, `interaction`, `defect` and
/// `electrons` sections of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub lattice: LatticeSpec,
    pub interaction: InteractionSpec,
    #[serde(default)]
    pub defect: Option<DefectSpec>,
    pub electrons: ElectronSpec,
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| QdetError::Config(e.to_string()))
    }

    pub fn n_sites(&self) -> usize {
        match self.lattice.shape {
            LatticeShape::Chain => self.lattice.sites,
            LatticeShape::Grid => self.lattice.nx * self.lattice.ny,
        }
    }
}

fn lattice_geometry(l: &LatticeSpec) -> Result<Vec<[f64; 3]>> {
    match l.shape {
        LatticeShape::Chain => {
            if l.sites == 0 {
                return Err(QdetError::InvalidModel("chain needs at least one site".into()));
            }
            Ok((0..l.sites).map(|i| [i as f64, 0.0, 0.0]).collect())
        }
        LatticeShape::Grid => {
            if l.nx == 0 || l.ny == 0 {
                return Err(QdetError::InvalidModel("grid needs nx, ny > 0".into()));
            }
            let mut out = Vec::with_capacity(l.nx * l.ny);
            for y in 0..l.ny {
                for x in 0..l.nx {
                    out.push([x as f64, y as f64, 0.0]);
                }
            }
            Ok(out)
        }
    }
}

/// Nearest-neighbour bonds (open or periodic boundaries).
fn lattice_bonds(l: &LatticeSpec) -> Vec<(usize, usize)> {
    let mut bonds = Vec::new();
    match l.shape {
        LatticeShape::Chain => {
            let n = l.sites;
            for i in 0..n.saturating_sub(1) {
                bonds.push((i, i + 1));
            }
            if l.periodic && n > 2 {
                bonds.push((0, n - 1));
            }
        }
        LatticeShape::Grid => {
            let idx = |x: usize, y: usize| y * l.nx + x;
            for y in 0..l.ny {
                for x in 0..l.nx {
                    if x + 1 < l.nx {
                        bonds.push((idx(x, y), idx(x + 1, y)));
                    } else if l.periodic && l.nx > 2 {
                        bonds.push((idx(0, y), idx(x, y)));
                    }
                    if y + 1 < l.ny {
                        bonds.push((idx(x, y), idx(x, y + 1)));
                    } else if l.periodic && l.ny > 2 {
                        bonds.push((idx(x, 0), idx(x, y)));
                    }
                }
            }
        }
    }
    bonds
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Builds a lattice model: tight-binding `h_core` plus a density-density
/// interaction `v_iijj = U_ij` (onsite `U`, offsite `V/d`).
pub fn build_model(spec: &ModelSpec) -> Result<ModelSystem> {
    let geometry = lattice_geometry(&spec.lattice)?;
    let n = geometry.len();
    let mut tags = vec![Region::Host; n];
    if let Some(d) = &spec.defect {
        for &s in &d.sites {
            if s >= n {
                return Err(QdetError::InvalidModel(format!(
                    "defect site {s} outside lattice of {n} sites"
                )));
            }
            tags[s] = Region::Defect;
        }
    }

    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let stagger = if i % 2 == 0 {
            spec.lattice.staggered_onsite
        } else {
            -spec.lattice.staggered_onsite
        };
        h[(i, i)] = spec.lattice.onsite + stagger;
    }
    for (i, j) in lattice_bonds(&spec.lattice) {
        let mixed = tags[i] != tags[j];
        let t = match (&spec.defect, mixed) {
            (Some(DefectSpec { hopping: Some(td), .. }), true) => *td,
            _ => spec.lattice.hopping,
        };
        h[(i, j)] -= t;
        h[(j, i)] -= t;
    }

    let mut u = DMatrix::zeros(n, n);
    for i in 0..n {
        u[(i, i)] = spec.interaction.onsite_u;
        for j in 0..n {
            if i != j && spec.interaction.offsite_v != 0.0 {
                u[(i, j)] = spec.interaction.offsite_v / distance(&geometry[i], &geometry[j]);
            }
        }
    }
    if let Some(d) = &spec.defect {
        for &s in &d.sites {
            h[(s, s)] = d.onsite_energy;
            u[(s, s)] = d.onsite_u;
        }
    }

    let mut v = Tensor4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if u[(i, j)] != 0.0 {
                v.set(i, j, i, j, u[(i, j)]);
            }
        }
    }

    let m = ModelSystem::new(h, v, spec.electrons.count, tags)?;
    Ok(ModelSystem {
        site_geometry: Some(geometry),
        ..m
    })
}

impl ModelSystem {
    /// Validating constructor.
    pub fn new(h_core: DMatrix<f64>, v: Tensor4, n_elec: usize, region_tags: Vec<Region>) -> Result<Self> {
        let n = h_core.nrows();
        if h_core.ncols() != n || v.n() != n || region_tags.len() != n {
            return Err(QdetError::InvalidModel(format!(
                "inconsistent dimensions: h_core {}x{}, v {}, tags {}",
                h_core.nrows(),
                h_core.ncols(),
                v.n(),
                region_tags.len()
            )));
        }
        if n_elec % 2 == 1 {
            return Err(QdetError::OddElectronCount(n_elec));
        }
        if n_elec == 0 || n_elec > 2 * n {
            return Err(QdetError::InvalidModel(format!(
                "electron count {n_elec} outside (0, {}]",
                2 * n
            )));
        }
        let asym = (&h_core - h_core.transpose()).amax();
        if asym > 0.0 {
            return Err(QdetError::InvalidModel(format!("h_core not symmetric ({asym:.3e})")));
        }
        let sym = v.symmetry_residual();
        if sym > 0.0 {
            return Err(QdetError::InvalidModel(format!(
                "interaction breaks the 8-fold symmetry ({sym:.3e})"
            )));
        }
        let margin = v.psd_margin();
        if margin < -PSD_TOLERANCE {
            return Err(QdetError::NotPositiveSemidefinite { eigenvalue: margin });
        }
        Ok(ModelSystem {
            n_orb: n,
            h_core,
            v,
            n_elec,
            region_tags,
            site_geometry: None,
        })
    }

    /// `v_ijkl` in the stored pairing; equal to each of its symmetry images.
    pub fn canonical_element(&self, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
        canonical_element(i, j, k, l, &self.v)
    }

    pub fn defect_sites(&self) -> Vec<usize> {
        self.region_tags
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Region::Defect)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_interacting(&self) -> bool {
        self.v.max_abs() > 0.0
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            header: TENSOR_LAYOUT.to_string(),
            n_orb: self.n_orb,
            n_elec: self.n_elec,
            h_core: (0..self.n_orb)
                .map(|i| self.h_core.row(i).iter().cloned().collect())
                .collect(),
            v_tensor: self.v.raw().to_vec(),
            region_tags: self.region_tags.clone(),
            site_geometry: self.site_geometry.clone(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let n = doc.n_orb;
        if doc.h_core.len() != n || doc.h_core.iter().any(|r| r.len() != n) {
            return Err(QdetError::InvalidModel("h_core shape mismatch".into()));
        }
        let h = DMatrix::from_fn(n, n, |i, j| doc.h_core[i][j]);
        let v = Tensor4::from_raw(n, doc.v_tensor.clone())?;
        let m = ModelSystem::new(h, v, doc.n_elec, doc.region_tags.clone())?;
        Ok(ModelSystem {
            site_geometry: doc.site_geometry.clone(),
            ..m
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

/// JSON layout of a model. `v_tensor` is the flat row-major tensor
/// described in `header`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub header: String,
    pub n_orb: usize,
    pub n_elec: usize,
    pub h_core: Vec<Vec<f64>>,
    pub v_tensor: Vec<f64>,
    pub region_tags: Vec<Region>,
    #[serde(default)]
    pub site_geometry: Option<Vec<[f64; 3]>>,
}

pub fn canonical_element(i: usize, j: usize, k: usize, l: usize, v: &Tensor4) -> Result<f64> {
    v.element(i, j, k, l)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    pub symmetry_residual: f64,
    pub psd_margin: f64,
    pub h_core_asymmetry: f64,
    pub n_elec_even: bool,
    pub n_elec_in_range: bool,
}

impl ModelDiagnostics {
    pub fn passes(&self) -> bool {
        self.symmetry_residual == 0.0
            && self.psd_margin >= -PSD_TOLERANCE
            && self.h_core_asymmetry == 0.0
            && self.n_elec_even
            && self.n_elec_in_range
    }
}

/// Reports every invariant residual without failing.
pub fn validate_model(m: &ModelSystem) -> ModelDiagnostics {
    ModelDiagnostics {
        symmetry_residual: m.v.symmetry_residual(),
        psd_margin: m.v.psd_margin(),
        h_core_asymmetry: (&m.h_core - m.h_core.transpose()).amax(),
        n_elec_even: m.n_elec.is_multiple_of(2),
        n_elec_in_range: m.n_elec > 0 && m.n_elec <= 2 * m.n_orb,
    }
}

/// Random model with a general (non density-density) interaction
/// `v_ijkl = scale * Σ_Q B^Q_ik B^Q_jl` built from symmetric factors, so
/// the pair matrix is positive semidefinite by construction. The one-body
/// part has a diagonal ramp that keeps a HOMO/LUMO gap.
pub fn random_model(n_orb: usize, n_elec: usize, n_aux: usize, scale: f64, seed: u64) -> Result<ModelSystem> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut h = DMatrix::zeros(n_orb, n_orb);
    for i in 0..n_orb {
        h[(i, i)] = -1.0 + 2.0 * i as f64 / n_orb.max(1) as f64 + rng.gen_range(-0.1..0.1);
        for j in 0..i {
            let x = rng.gen_range(-0.3..0.3);
            h[(i, j)] = x;
            h[(j, i)] = x;
        }
    }
    let mut v = Tensor4::zeros(n_orb);
    for _ in 0..n_aux {
        let mut b = DMatrix::zeros(n_orb, n_orb);
        for i in 0..n_orb {
            for k in 0..=i {
                let x = rng.gen_range(-1.0..1.0);
                b[(i, k)] = x;
                b[(k, i)] = x;
            }
        }
        for i in 0..n_orb {
            for j in 0..n_orb {
                for k in 0..n_orb {
                    for l in 0..n_orb {
                        let cur = v.get(i, j, k, l);
                        v.set(i, j, k, l, cur + scale * b[(i, k)] * b[(j, l)]);
                    }
                }
            }
        }
    }
    // Floating-point sums are exact under the index swaps only up to
    // rounding; re-impose the symmetry from the canonical representative.
    for ([i, j, k, l], x) in v.clone().canonical_entries(-1.0) {
        v.set_symmetric(i, j, k, l, x);
    }
    let tags = (0..n_orb)
        .map(|i| if i < n_orb / 2 { Region::Defect } else { Region::Host })
        .collect();
    ModelSystem::new(h, v, n_elec, tags)
}

/// Eigenvalues of `h_core` (ascending).
pub fn core_spectrum(m: &ModelSystem) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.h_core.clone()).eigenvalues.iter().cloned().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}
