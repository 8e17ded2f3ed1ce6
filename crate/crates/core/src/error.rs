use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid chain state: {0}")]
    InvalidState(String),

    #[error("invalid density value {value} from {context}")]
    InvalidDensity { context: &'static str, value: f64 },

    /// The diffusion coefficient vanished at the given step of a path.
    #[error("singular diffusion at step {step}")]
    SingularDiffusion { step: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("stationary distribution is not unique")]
    NonUnique,

    #[error("{message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors a forward model raises for inputs it cannot map. The sampler
    /// treats these as rejected proposals instead of aborting the chain.
    pub fn is_model_domain(&self) -> bool {
        matches!(self, Error::SingularDiffusion { .. } | Error::Domain(_))
    }
}
