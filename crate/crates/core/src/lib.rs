//! Contextual-temperature mixture-of-softmaxes language modeling.
//!
//! The crate bundles a small reverse-mode differentiation engine, PTB-style
//! corpus tooling, the CT-MoS model with its regularized objective, a
//! deterministic trainer, a closed-form two-class gradient oracle, and the
//! analysis and ablation drivers built on top of them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod corpus;
pub mod kv;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Graph, GraphError, NodeId};
pub use tensor::Tensor;
