//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by grid I/O, geometry, and the analysis operations.
///
/// Parse errors carry the 1-based line number of the offending input line
/// so callers can point at the exact spot in the file.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    // --- grid and file parsing ---
    #[error("line {line}: missing header key `{key}`")]
    MissingHeaderKey { key: &'static str, line: usize },
    #[error("line {line}: header key `{key}` has invalid value `{token}`")]
    InvalidHeaderValue {
        key: &'static str,
        token: String,
        line: usize,
    },
    #[error("line {line}: expected {expected} cells, found {found}")]
    CellCountMismatch {
        expected: usize,
        found: usize,
        line: usize,
    },
    #[error("line {line}: non-numeric cell `{token}`")]
    NonNumericCell { token: String, line: usize },
    #[error("grid has a rotated or non-square-cell transform; ASCII grids cannot express it")]
    RotatedGridUnsupported,
    #[error("unsupported magic `{magic}`; only P2 and P5 PGM files are readable")]
    UnsupportedMagic { magic: String },
    #[error("unsupported PGM maxval {maxval}; must be in 1..=65535")]
    UnsupportedMaxval { maxval: u64 },
    #[error("truncated payload: expected {expected} more samples, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("world file has {found} non-empty lines, expected 6")]
    WrongLineCount { found: usize },
    #[error("line {line}: non-numeric value `{token}`")]
    NonNumericLine { token: String, line: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    WrongFieldCount {
        expected: usize,
        found: usize,
        line: usize,
    },
    #[error("cell {index}: value {value} is not a valid class label")]
    InvalidClassLabel { index: usize, value: f64 },

    // --- geometry ---
    #[error("degenerate transform: |a*e - b*d| is zero")]
    DegenerateTransform,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },
    #[error("no input grids given")]
    EmptyInput,

    // --- preprocessing ---
    #[error("affine fit needs at least 3 control points, got {got}")]
    TooFewPoints { got: usize },
    #[error("control points are collinear; affine fit is underdetermined")]
    CollinearPoints,
    #[error("degenerate value range: all valid cells are equal")]
    DegenerateRange,

    // --- edge detection ---
    #[error("grid is {rows}x{cols}; operation needs at least 3x3")]
    GridTooSmall { rows: usize, cols: usize },

    // --- segmentation ---
    #[error("threshold cuts must be finite and strictly ascending")]
    UnsortedCuts,
    #[error("seed ({col},{row}) is outside the grid")]
    SeedOutOfBounds { col: usize, row: usize },
    #[error("seed ({col},{row}) lies on a nodata cell")]
    SeedOnNodata { col: usize, row: usize },

    // --- clustering ---
    #[error("need at least {needed} distinct samples, found {found}")]
    TooFewDistinctSamples { needed: usize, found: usize },

    // --- spatial statistics ---
    #[error("observation {index} has negative value {value}")]
    NegativeValue { index: usize, value: f64 },
    #[error("all pair products are zero; fewer than two nonzero values")]
    AllZeroValues,
    #[error("weight set is empty; no pairs within the cutoff distance")]
    EmptyWeights,
    #[error("need at least 2 observations, got {got}")]
    TooFewObservations { got: usize },
    #[error("cutoff distance must be > 0, got {got}")]
    NonpositiveDistance { got: f64 },

    // --- change detection ---
    #[error("no co-valid pixels between the two inputs")]
    NoValidPixels,
    #[error("difference covariance has zero trace; the inputs do not differ")]
    DegenerateCovariance,
    #[error("theme class set is empty")]
    EmptyTheme,
}
