use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("observation is {found:?} but the model expects {expected:?}")]
    ImageSize {
        expected: [usize; 2],
        found: [usize; 2],
    },
    #[error("policy input contains non-finite values")]
    NonFiniteInput,
    #[error("every action entry in the batch is masked")]
    AllMasked,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:.4e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },
    #[error("no prediction in the ensemble buffer covers step {0}")]
    EnsembleEmpty(usize),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] viewplan_core::Error),
}

pub type Result<T, E = PolicyError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
