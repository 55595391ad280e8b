use thiserror::Error;

/// Errors raised by the simulator, learners, and reductions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("policy fault: {0}")]
    PolicyFault(String),

    /// An enumeration would exceed one of the configured size guards.
    #[error("size guard exceeded: {what} needs more than {bound} (raise the guard or shrink the instance)")]
    GuardExceeded { what: &'static str, bound: u64 },

    #[error("empty policy class")]
    EmptyClass,

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("wrong game shape: {0}")]
    WrongGameShape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("tolerance not reached: {0}")]
    Tolerance(String),

    #[error("episode {episode}: {source}")]
    AtEpisode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True if this error (or the one it wraps) is a guard violation.
    pub fn is_guard(&self) -> bool {
        match self {
            Error::GuardExceeded { .. } => true,
            Error::AtEpisode { source, .. } => source.is_guard(),
            _ => false,
        }
    }

    pub(crate) fn at_episode(self, episode: usize) -> Error {
        match self {
            e @ Error::AtEpisode { .. } => e,
            e => Error::AtEpisode {
                episode,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
