use thiserror::Error;

/// Errors raised by the toolkit. Each variant corresponds to a named failure
/// of one of the operations; `Unknown` classifications are values, not errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value from {what} at {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64> },

    #[error("dimension error: {0}")]
    DimensionError(String),

    #[error("point {0:?} is not in the relative interior of a leaf")]
    NotInterior(Vec<f64>),

    #[error("singular values cluster ambiguously near 1 at {0:?}")]
    FrameDegenerate(Vec<f64>),

    #[error("no seed produced a chart base")]
    EmptyChart,

    #[error("level {level:?} is not reachable along the leaf of seed {seed:?}")]
    LevelUnreachable { level: Vec<f64>, seed: Vec<f64> },

    #[error("no chart leaf contains {0:?}")]
    NoLeaf(Vec<f64>),

    #[error("b = {0:?} lies outside the leaf image (gamma = {1})")]
    OutsideLeaf(Vec<f64>, f64),

    #[error("det H(b) = {0} is not positive")]
    SingularH(f64),

    #[error("uncovered mass fraction {fraction} exceeds {limit}")]
    CoverageGap { fraction: f64, limit: f64 },

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("invalid dimension parameter N = {n_eff} for ambient dimension {n_dim}")]
    InvalidN { n_eff: f64, n_dim: usize },

    #[error("N = n requires a constant weight, but rho varies at {0:?}")]
    NonConstantRho(Vec<f64>),

    #[error("finite-difference stencil leaves the support at {0:?}")]
    BoundaryContact(Vec<f64>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("newton solve failed: {0}")]
    Newton(String),
}

pub type Result<T> = std::result::Result<T, Error>;
