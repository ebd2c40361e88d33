use std::path::PathBuf;

/// Unified error type for the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian: max |A - A^H| = {max_asym:.3e} exceeds {tol:.1e}")]
    NotHermitian { max_asym: f64, tol: f64 },

    #[error("trace deviates from one by {deviation:.3e} (tolerance {tol:.1e})")]
    TraceNotOne { deviation: f64, tol: f64 },

    #[error("state has negative eigenvalue {lambda_min:.3e} (floor {floor:.1e})")]
    NotPositive { lambda_min: f64, floor: f64 },

    #[error("propagator fails unitarity: max |U U^H - I| = {deviation:.3e} (tolerance {tol:.1e})")]
    NotUnitary { deviation: f64, tol: f64 },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "spectrum not converged: max relative level shift {shift:.3e} between \
         charge cutoffs {cutoff} and {recheck} exceeds {tol:.1e}; raise charge_cutoff"
    )]
    SpectrumNotConverged {
        cutoff: usize,
        recheck: usize,
        shift: f64,
        tol: f64,
    },

    #[error("level index {index} out of range (need index + {margin} < {levels} retained levels)")]
    LevelIndexOutOfRange {
        index: usize,
        margin: usize,
        levels: usize,
    },

    #[error("collision {index} produced an invalid state: {source}")]
    InvalidStateAtCollision { index: u64, source: Box<Error> },

    #[error("observable `{name}` is non-finite at collision {index}")]
    NonFiniteObservable { name: &'static str, index: u64 },

    #[error("computed ergotropy {value:.3e} is below the numerical floor; state or levels are corrupted")]
    NegativeErgotropy { value: f64 },

    #[error("trajectory shows no oscillation; fit it with the saturation model instead")]
    NotOscillatory,

    #[error("trajectory oscillates; fit it with the damped-cosine model instead")]
    NotSaturating,

    #[error("fit window [{lo}, {hi}] is invalid for a trajectory with {points} recorded points")]
    BadFitWindow { lo: usize, hi: usize, points: usize },

    #[error(
        "fit rejected: residual rms {rms:.3e} exceeds {limit:.3e} \
         (model does not describe the data in this window)"
    )]
    FitResidualTooLarge { rms: f64, limit: f64 },

    #[error("scaling fit needs at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("rank-deficient fit design: {context}")]
    RankDeficient { context: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("override `{key}`: {reason}")]
    BadOverride { key: String, reason: String },

    #[error("missing file referenced by index: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv parse error at {path}:{line}: {reason}")]
    CsvParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{count} sweep point(s) failed; see the sweep index for details")]
    SweepFailures { count: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
