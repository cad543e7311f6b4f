use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),

    #[error("no matrices for single-group hierarchy")]
    SingleGroup,

    #[error("unknown class id {id} at pixel (n={n}, i={i}, j={j})")]
    UnknownClass { id: u32, n: usize, i: usize, j: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("empty dataset: no scored pixels")]
    EmptyDataset,

    #[error("netpbm parse error: {0}")]
    Netpbm(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("infeasible scene config: {0}")]
    SceneConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
