use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An episode ran past the configured horizon without reaching `s_inf`.
    #[error("episode {episode} exceeded the horizon of {horizon} steps")]
    HorizonExceeded { episode: usize, horizon: usize },

    /// Agent, interface or environment broke the process contract.
    #[error("contract violation at t={t}: {message}")]
    Contract { t: usize, message: String },

    /// Learning drove the agent's parameters to NaN or infinity.
    #[error("agent parameters became non-finite: {0}")]
    NonFinite(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("relative entropy undefined: supp(p) is not contained in supp(q)")]
    SupportMismatch,

    #[error("invalid representation map: {0}")]
    Representation(String),

    #[error("value iteration did not converge within {iterations} sweeps")]
    Divergence { iterations: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(t: usize, message: impl Into<String>) -> Self {
        Error::Contract { t, message: message.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
