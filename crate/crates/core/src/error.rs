use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("label {label} at sample {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("operation requires labels")]
    MissingLabels,
    #[error("column {0} has (near) zero norm")]
    ZeroNormColumn(usize),
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |K[{row},{col}] - K[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("diagonal entry {index} is {value}, expected 1")]
    BadDiagonal { index: usize, value: f64 },
    #[error("symmetric eigendecomposition did not converge")]
    EigFailure,
    #[error("singular value decomposition did not converge")]
    SvdFailure,
    #[error("eigenvalue {0:e} is below the PSD floor")]
    NegativeEigenvalue(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("all singular values vanish")]
    ZeroMatrix,
    #[error("minimum entropy {0:e} is too small for a ratio")]
    DegenerateEntropy(f64),
    #[error("at least two classes are required, found {0}")]
    TooFewClasses(usize),
    #[error("class {0} has fewer than two samples")]
    InsufficientClassSize(usize),
    #[error("centroids of classes {0} and {1} coincide")]
    CoincidentCentroids(usize, usize),
    #[error("dimension {dim} is too small, need at least {needed}")]
    DimensionTooSmall { dim: usize, needed: usize },
    #[error("structure matrix with alpha = {alpha} and {classes} classes is not PSD")]
    NotPsd { alpha: f64, classes: usize },
    #[error("closed form undefined for {0} classes (need at least 3)")]
    DegenerateClassCount(usize),
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("rank(Z1) = {rank1} must exceed rank(Z2) = {rank2}")]
    RankOrderViolation { rank1: usize, rank2: usize },
    #[error("finite-difference step {0:e} outside [1e-7, 1e-3]")]
    InvalidStep(f64),
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(String),
    #[error("loss became non-finite at step {0}")]
    DivergedLoss(usize),
    #[error("checkpoint architectures differ: {0}")]
    ArchitectureMismatch(String),
    #[error("no sample passed the confidence threshold")]
    EmptySelection,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}
