use thiserror::Error;

/// Errors raised by the geometric and analytic kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient (sigma_min/sigma_max = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("vector is not a unit vector (norm = {norm})")]
    NotUnit { norm: f64 },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unsupported nonsmooth argument at byte {offset}: {message}")]
    UnsupportedNonsmooth { offset: usize, message: String },

    #[error("expression evaluated outside its domain: {0}")]
    EvalDomain(String),

    #[error("invalid patch: {0}")]
    InvalidPatch(String),

    #[error("point ({x1}, {x2}) lies outside the chart domain")]
    OutOfChart { x1: f64, x2: f64 },

    #[error("point ({x1}, {x2}) lies on a ridge of the graph function")]
    OnRidge { x1: f64, x2: f64 },

    #[error("point lies outside the chart overlap: {0}")]
    OutOfOverlap(String),

    #[error("partition of unity has a gap (bump sum {sum:e} at sample {index})")]
    CoverGap { index: usize, sum: f64 },

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("ridge cannot partition the chart domain: {0}")]
    RidgeSplitFailure(String),

    #[error("field arity mismatch: {0}")]
    ArityMismatch(String),

    #[error("boundary field has no chart gradient and stencil approximation is disabled")]
    NoChartGradient,

    #[error("test field is not flagged as patch-local")]
    NonlocalSupport,

    #[error("field is not tangential: {0}")]
    NotTangential(String),

    #[error("least-squares problem is ill-conditioned (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("insufficient test functions: {tests} tests for {unknowns} unknowns")]
    InsufficientTests { tests: usize, unknowns: usize },

    #[error("jacobian callback disagrees with finite differences (relative error {error:e})")]
    JacobianMismatch { error: f64 },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
