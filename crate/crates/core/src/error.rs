use thiserror::Error;

pub type Result<T, E = QdetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QdetError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("electron count {0} is odd: a closed-shell reference is required")]
    OddElectronCount(usize),

    #[error("interaction is not positive semidefinite (smallest eigenvalue {eigenvalue:.6e})")]
    NotPositiveSemidefinite { eigenvalue: f64 },

    #[error("index ({i}, {j}, {k}, {l}) out of range for {n} orbitals")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        k: usize,
        l: usize,
        n: usize,
    },

    #[error("invalid orbital set: {0}")]
    InvalidOrbitalSet(String),

    #[error("SCF did not converge after {iterations} iterations (residual {residual:.3e})")]
    ScfNotConverged { iterations: usize, residual: f64 },

    #[error("HOMO/LUMO degenerate within {gap:.3e} Ha: fractional occupation is unsupported")]
    FermiLevelDegeneracy { gap: f64 },

    #[error("broadening must be positive, got {0}")]
    InvalidBroadening(f64),

    #[error("frequency {omega} coincides with a pole")]
    PoleHit { omega: String },

    #[error("RPA instability: (1 - P v) is singular (smallest singular value {singular_value:.3e})")]
    RpaInstability { singular_value: f64 },

    #[error("RPA instability: negative squared excitation energy {omega_squared:.6e}")]
    NegativeRpaEigenvalue { omega_squared: f64 },

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("quadrature not converged: node doubling changed the result by {residual:.3e} (tolerance {tolerance:.3e})")]
    QuadratureNotConverged { residual: f64, tolerance: f64 },

    #[error("contour integration requires a real frequency, got {0}")]
    ComplexFrequency(String),

    #[error("quasiparticle iteration for orbital {orbital} did not converge (last iterates {previous:.10} and {last:.10})")]
    QpNotConverged {
        orbital: usize,
        previous: f64,
        last: f64,
    },

    #[error("empty active space")]
    EmptyActiveSpace,

    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),

    #[error("no orbital has a localization factor >= {threshold}: lower the threshold")]
    EmptySelection { threshold: f64 },

    #[error("empty localization region")]
    EmptyRegion,

    #[error("determinant space of dimension {dim} exceeds the cap {cap}: use a smaller active space")]
    SpaceTooLarge { dim: usize, cap: usize },

    #[error("invalid determinant space: {0}")]
    InvalidSpace(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<QdetError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QdetError {
    /// True for failures of a numerical procedure (non-convergence,
    /// instabilities, poles) as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        match self {
            QdetError::ScfNotConverged { .. }
            | QdetError::FermiLevelDegeneracy { .. }
            | QdetError::PoleHit { .. }
            | QdetError::RpaInstability { .. }
            | QdetError::NegativeRpaEigenvalue { .. }
            | QdetError::QuadratureNotConverged { .. }
            | QdetError::QpNotConverged { .. }
            | QdetError::Eigensolver(_) => true,
            QdetError::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            s @ QdetError::Stage { .. } => s,
            other => QdetError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
