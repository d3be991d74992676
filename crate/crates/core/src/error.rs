use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown wavelet `{0}`")]
    UnknownWavelet(String),
    #[error("wavelet `{name}` is not smooth enough: derivative order {order} requested, filter supports {available}")]
    InsufficientRegularity {
        name: String,
        order: usize,
        available: usize,
    },
    #[error("refinement cascade did not converge: {0}")]
    NonConvergentCascade(String),
    #[error("x = {x} lies outside the domain of the {family} family")]
    DomainViolation { family: &'static str, x: f64 },
    #[error("quadrature failed to converge on [{lo}, {hi}] (estimated error {err:.3e})")]
    QuadratureFailure { lo: f64, hi: f64, err: f64 },
    #[error("integral diverges: {0}")]
    DivergentIntegral(String),
    #[error("empty data set")]
    EmptyData,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("no observations fall near y = {y} at level {m}")]
    LowDensity { y: f64, m: i32 },
    #[error("invalid slack parameters: nu1 + nu2 must be < 1 (got {nu1} + {nu2})")]
    InvalidNu { nu1: f64, nu2: f64 },
    #[error("empty level grid")]
    EmptyGrid,
    #[error("marginal density vanishes at y = {0}")]
    VanishingMarginal(f64),
    #[error("family `{0}` has no closed-form perturbation")]
    UnsupportedFamily(&'static str),
    #[error("perturbed density is negative at x = {x} ({value:.3e})")]
    NegativeDensity { x: f64, value: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("{failed} of {total} replications failed (limit is 1%)")]
    ExcessiveFailures { failed: usize, total: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
