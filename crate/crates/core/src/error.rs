use thiserror::Error;

/// Errors produced by the flowbot core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("element `{0}` is blocked and cannot carry flow")]
    BlockedElement(String),

    #[error("open circuit: {0}")]
    OpenCircuit(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("transient step failed at t = {time} s: {source}")]
    TransientStep {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Configuration(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("no deformation onset found in series")]
    NoDeformation,

    #[error("series never settled within its duration")]
    Unsettled,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidNetwork(_) => "invalid_network",
            Error::BlockedElement(_) => "blocked_element",
            Error::OpenCircuit(_) => "open_circuit",
            Error::Singular(_) => "singular",
            Error::Convergence { .. } => "convergence",
            Error::TransientStep { .. } => "transient_step",
            Error::Configuration(_) => "configuration",
            Error::Lookup(_) => "lookup",
            Error::Input(_) => "input",
            Error::NoDeformation => "no_deformation",
            Error::Unsettled => "unsettled",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
