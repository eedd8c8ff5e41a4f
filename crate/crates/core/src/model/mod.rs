//! The spatial-temporal dynamic network and its ablation variants.

mod config;
mod network;

pub use config::{LongPath, ModelConfig, Variant};
pub use network::{loss, AttentionTrace, DataBinding, ForwardNodes, Prediction, Stdn};
