//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Leaves are either
//! parameters (which receive gradients) or constants (masks, targets, detached
//! values). [`Graph::backward`] walks the recorded nodes once, in reverse
//! insertion order, which is a valid reverse topological order because a
//! node can only reference nodes created before it.
//!
//! The [`check`] module holds the central-difference oracle used to verify
//! the engine.

pub mod check;
mod graph;

pub use graph::{Gradients, Graph, NodeId};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
