//! Minimal dense autodiff used by the tokenizer and the transformer.

pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{AttentionMask, CeTarget, Graph, NodeId};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
