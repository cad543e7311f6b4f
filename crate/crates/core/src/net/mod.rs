//! From-scratch segmentation networks with hand-written backward passes.

pub mod blocks;
pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod model;
pub mod params;

pub use model::{NetCache, NetConfig, Network, Variant};
pub use params::{Grads, ParamId, ParamStore};
