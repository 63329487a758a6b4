use thiserror::Error;

/// Errors raised by the guidance engine.
///
/// The `Display` strings are part of the CLI contract: the exit-code mapping
/// in [`crate::cli`] and a few tests match on them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid attention map: {0}")]
    InvalidMap(String),

    #[error("degenerate map: constant scores")]
    DegenerateMap,

    #[error("invalid object count: {0}")]
    InvalidCount(usize),

    #[error("invalid threshold: {0}")]
    InvalidThreshold(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("map too small for k clusters (k = {k}, patches = {patches})")]
    MapTooSmall { k: usize, patches: usize },

    #[error("empty cluster {0}")]
    EmptyCluster(usize),

    #[error("trajectory finished")]
    TrajectoryFinished,

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("length mismatch: {0} targets vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error("at t={t}: {source}")]
    AtTimestep {
        t: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Io(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    /// Strips any timestep annotations and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTimestep { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at(self, t: u32) -> Error {
        Error::AtTimestep {
            t,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
