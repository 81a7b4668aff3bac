use thiserror::Error;

/// Errors surfaced by the library. Solver resource exhaustion (time or node
/// limits) is reported through `SolveStatus`, not through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a directed cycle")]
    CyclicGraph,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("big-M link violated at ({i},{j}): |w|={w:.6e} exceeds c*e={bound:.6e}")]
    LinkViolation { i: usize, j: usize, w: f64, bound: f64 },

    #[error("node has no free variable left to branch on")]
    NoFreeVariable,

    #[error("exhaustive enumeration supports at most {max} vertices, got {got}")]
    TooLarge { got: usize, max: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("input file has no data rows")]
    EmptyFile,

    /// The relaxation hit its iteration cap. The carried solution still holds
    /// a valid (weak-duality) dual bound and may be used by callers.
    #[error("relaxation iteration cap reached (kkt residual {:.3e})", .0.kkt_residual)]
    MaxIterations(Box<crate::relax::RelaxationSolution>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
