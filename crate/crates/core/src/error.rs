use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes reached an operation or gradient accumulation.
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot differentiate through a gradient computed without higher-order taping")]
    HigherOrderDisabled,

    #[error("degenerate geometry: atoms {i} and {j} are {distance:.3e} Å apart")]
    DegenerateGeometry { i: usize, j: usize, distance: f64 },

    #[error("unsupported element with atomic number {0}")]
    UnsupportedElement(u32),

    #[error("non-finite values after block {block}")]
    NumericalDivergence { block: usize },

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite forces at t = {time} fs")]
    NonFiniteForces { time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the user's configuration rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_))
    }
}
