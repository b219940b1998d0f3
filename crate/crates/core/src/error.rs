use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain.
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// A request that reduces to a different, degenerate model.
    #[error("degenerate parameter: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("parse error at line {line}: {msg}")]
    ParseAt { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    /// The per-step nonlinear solve did not converge.
    #[error("solver failed at t = {time}: {msg} (residual {residual:e})")]
    Solver { time: f64, residual: f64, msg: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub(crate) fn parse_at(line: usize, msg: impl Into<String>) -> Self {
        Error::ParseAt { line, msg: msg.into() }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Whether the error stems from the numerical machinery rather than from
    /// the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Solver { .. } | Error::Numeric(_))
    }
}
