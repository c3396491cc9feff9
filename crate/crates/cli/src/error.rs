use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {detail}", path.display())]
    Input { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] viewplan_core::Error),
    #[error(transparent)]
    Policy(#[from] viewplan_policy::PolicyError),
    #[error(transparent)]
    Nbv(#[from] viewplan_nbv::NbvError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("websocket: {0}")]
    Socket(#[from] tungstenite::Error),
}

impl CliError {
    /// Problems the user can fix from the command line.
    pub fn is_user_error(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Usage(_) | Self::Input { .. })
    }

    pub fn input(path: impl Into<PathBuf>, detail: impl std::fmt::Display) -> Self {
        Self::Input {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
