use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] erl_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("identity `{name}` violated: residual {residual:e} > {tolerance:e}{}", location.map(|(s, a)| format!(" at state {s}, action {a}")).unwrap_or_default())]
    Identity {
        name: String,
        residual: f64,
        tolerance: f64,
        location: Option<(usize, usize)>,
    },
}

impl HarnessError {
    /// Process exit status: 2 for identity violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Identity { .. } => 2,
            HarnessError::Core(erl_core::Error::IdentityViolation { .. })
            | HarnessError::Core(erl_core::Error::ResidualTooLarge { .. }) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
