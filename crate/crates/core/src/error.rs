use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeecError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate point set: {0}")]
    DegenerateMesh(String),

    #[error("face dimension {p} out of range for a {dim}-dimensional mesh")]
    FaceDimension { p: usize, dim: usize },

    #[error("family {family} is not defined on {cell} meshes")]
    FamilyMismatch { family: String, cell: String },

    #[error("cell id {id} out of range ({count} cells)")]
    CellOutOfRange { id: usize, count: usize },

    #[error("unsupported quadrature order {order} for {cell}")]
    UnsupportedOrder { order: usize, cell: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("incompatible spaces: {0}")]
    IncompatibleSpaces(String),

    #[error("relative error undefined: exact form has zero norm")]
    ZeroNorm,

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("wrong formulation: {0}")]
    WrongFormulation(String),

    #[error("dense check refused: {size} degrees of freedom exceeds cap {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error("not enough points for a fit: {0} (need at least 3)")]
    TooFewPoints(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<FeecError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FeecError {
    pub fn context(self, context: impl Into<String>) -> Self {
        FeecError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, FeecError>;
