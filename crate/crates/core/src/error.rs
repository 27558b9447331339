use crate::kg::KgError;
use crate::registry::UnknownStrategy;
use crate::tensor::{Checkpoint, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("every query token is padding")]
    AllPadding,
    #[error("retention ratio {0} outside (0, 1]")]
    BadRetention(f64),
    #[error("node {0} has no incoming edges and self-loops are disabled")]
    NoNeighbors(usize),
    #[error("need at least 2 choices, got {0}")]
    TooFewChoices(usize),
    #[error("subgraph has no nodes besides the context node")]
    EmptyGraph,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        /// Parameters from the last completed epoch.
        last_good: Box<Checkpoint>,
    },
    #[error("dataset is empty: {0}")]
    EmptyDataset(&'static str),
    #[error("invalid synthetic task: {0}")]
    Spec(String),
    #[error("gradient check failed: max relative error {max_rel_error:e} exceeds {tol:e}")]
    GradCheck { max_rel_error: f64, tol: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Kg(KgError::Io { .. }) | Error::Io { .. } => "io",
            Error::Kg(_) => "kg",
            Error::Strategy(_) => "unknown_strategy",
            Error::EmptyQuery | Error::AllPadding | Error::EmptyGraph | Error::NoNeighbors(_) => "input",
            Error::TooFewChoices(_) | Error::EmptyDataset(_) => "dataset",
            Error::BadRetention(_) | Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Diverged { .. } => "diverged",
            Error::Spec(_) => "spec",
            Error::GradCheck { .. } => "gradcheck",
        }
    }

    /// The file an error refers to, when there is one.
    pub fn path(&self) -> Option<&str> {
        match self {
            Error::Io { path, .. } | Error::Parse { path, .. } | Error::Kg(KgError::Io { path, .. }) => Some(path),
            _ => None,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
