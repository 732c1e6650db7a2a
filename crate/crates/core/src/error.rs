//! Error types shared across the toolkit.

use thiserror::Error;

/// A single validation failure, pointing at the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted path into the spec, e.g. `offspring[0].atoms[2].p`.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid process spec:\n{}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("type index {index} out of range for {d} types")]
    TypeIndex { index: usize, d: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("operation requires a discrete-time spec: {0}")]
    DiscreteTimeRequired(String),

    #[error("operation requires a continuous-time spec with lifespan laws for all types")]
    ContinuousTimeRequired,

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error(
        "correlation entry ({i},{j}) is undefined (zero-variance type); \
         use the covariance-based limit instead"
    )]
    UndefinedCorrelation { i: usize, j: usize },

    #[error("total population mean is zero at t={t}; type proportions are undefined")]
    ZeroPopulation { t: u32 },

    #[error(
        "covariance matrix is numerically degenerate \
         (min eigenvalue {min_eig:e} below threshold {threshold:e})"
    )]
    DegenerateCovariance { min_eig: f64, threshold: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("snapshot is extinct; fractions and scaled deviations are undefined")]
    Extinct,

    #[error("all {replicates} replicates went extinct")]
    AllExtinct { replicates: u64 },

    #[error("outside the exhaustive-enumeration domain: {0}")]
    OracleDomain(String),

    #[error("state space exceeded the cap of {cap} states during exhaustive enumeration")]
    StateSpace { cap: usize },

    #[error(
        "optimizer did not converge within {max_iter} iterations \
         (best objective {best:.6e}); increase --max-iter or adjust the initial point"
    )]
    NonConvergence { max_iter: usize, best: f64 },

    #[error("initial parameters are not strictly inside the feasible region: {0}")]
    InfeasibleInit(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
