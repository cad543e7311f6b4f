//! Importance-aware loss (IAL) for semantic segmentation, toy-scale
//! ERF-PSPNet / BiERF-PSPNet networks, and a synthetic street-scene harness
//! for comparing IAL against frequency-weighted cross-entropy.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hierarchy;
pub mod loss;
pub mod maps;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use hierarchy::ImportanceHierarchy;
pub use maps::{LabelMap, ProbMap};
pub use tensor::{Real, Tensor};
