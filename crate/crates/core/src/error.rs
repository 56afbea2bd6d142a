use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mass matrix is not positive definite: leading minor {minor} = {value}")]
    NotPositiveDefinite { minor: usize, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("transform is singular at pitch {pitch} rad (|pitch| must stay below pi/2 - 1e-6)")]
    SingularTransform { pitch: f64 },

    #[error("state diverged: {0}")]
    DivergedState(String),

    #[error("time step {dt} s outside (0, 0.1]")]
    InvalidStep { dt: f64 },

    #[error("negative depth {0} m")]
    NegativeDepth(f64),

    #[error("command rejected: {0}")]
    CommandRejected(&'static str),

    #[error("calibration precondition violated: {0}")]
    Precondition(String),

    #[error("no bracket: target {target} s outside achievable completion times [{low}, {high}] s")]
    NoBracket { target: f64, low: f64, high: f64 },

    #[error("objective not monotone in amplitude: t({a_lo}) = {t_lo}, t({a_hi}) = {t_hi}")]
    NonMonotone {
        a_lo: f64,
        t_lo: f64,
        a_hi: f64,
        t_hi: f64,
    },

    #[error("{}", match line { Some(l) => format!("config error at line {l}: {message}"), None => format!("config error: {message}") })]
    Config { line: Option<usize>, message: String },

    #[error("log record {index}: {message}")]
    CorruptLog { index: usize, message: String },

    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
