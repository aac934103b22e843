use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tuple length {found} does not match tensor rank {rank}")]
    RankMismatch { rank: usize, found: usize },

    #[error("orbital id {id} is out of range for a model with {count} orbitals")]
    UnknownOrbital { id: usize, count: usize },

    #[error("unsupported {what}: {detail}")]
    Unsupported { what: &'static str, detail: String },

    #[error("degenerate energy denominator {value:e} at cut {cut} for index assignment {assignment:?}")]
    DegenerateDenominator {
        cut: usize,
        value: f64,
        assignment: Vec<usize>,
    },

    #[error("external line {line} has no orbital assignment")]
    UnassignedExternal { line: usize },

    #[error("invalid diagram: {0}")]
    InvalidDiagram(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("ordering family parts are connected: {0}")]
    PartsNotDisconnected(String),

    #[error("singular resolvent: state {state} has energy {energy:e} equal to the model-space energy")]
    SingularResolvent { state: usize, energy: f64 },

    #[error("electron count mismatch: {0}")]
    ElectronCount(String),

    #[error("sector dimension {dim} exceeds the dense limit {limit}")]
    SectorTooLarge { dim: usize, limit: usize },

    #[error("ambiguous model-space eigenvectors: {0}")]
    OverlapAmbiguity(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("notation parse error: {0}")]
    Notation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
