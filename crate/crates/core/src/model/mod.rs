//! Embedding, stacked LSTM backbone, mixture-of-softmaxes head and the
//! contextual temperature head.
//!
//! [`forward`] builds the differentiable computation on a [`Graph`]; the
//! functions in [`heads`] evaluate the output layer for a single position
//! without a graph.
//!
//! [`Graph`]: crate::Graph

mod config;
mod forward;
pub mod heads;
mod params;

use thiserror::Error;

use crate::autodiff::GraphError;

pub use config::{
    DropoutRates, ModelConfig, MoSConfig, TemperatureConfig, TemperatureMode, TemperatureVariant,
};
pub use forward::{
    forward, forward_backbone, output_distribution, BackboneOutput, DropoutMasks, ForwardPass,
    HeadOutput, ParamNodes, RecurrentState,
};
pub use heads::{contextual_temperature, ct_mos_distribution, mos_distribution, mos_head, MixtureLogits};
pub use params::{LstmWeights, ModelParams, TemperatureWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl LanguageModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }
}
