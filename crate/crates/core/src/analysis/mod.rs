//! Temperature analyses and ablation drivers over trained models.

mod ablation;
mod case_study;
mod positions;
mod trajectories;

use thiserror::Error;

pub use ablation::{
    run_ablation, run_constant_tau_ablation, run_normalization_ablation, AblationData, AblationRecipe,
    AblationRow,
};
pub use case_study::{case_study_table, case_study_topk, CaseRecord};
pub use positions::{
    position_statistics, positions_table, slot_positions, ModelPositions, PositionStatistics,
    PositionStats, PositionTemperature, SLOTS,
};
pub use trajectories::{temperature_trajectories, trajectories_table, TrajectoryRecord};

use crate::autodiff::Graph;
use crate::corpus::CorpusBatch;
use crate::model::{
    forward, heads, DropoutMasks, LanguageModel, ModelError, RecurrentState, TemperatureConfig,
};
use crate::tensor::Tensor;
use crate::trainer::{CheckpointError, TrainError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Validates the squashing parameters, then maps temperature logits to
/// temperatures element-wise (softmax-normalized for the bounded variant).
pub fn normalize_temperature_variant(
    mu: &[f64],
    config: &TemperatureConfig,
) -> Result<Vec<f64>, AnalysisError> {
    config.validate()?;
    if mu.is_empty() {
        return Err(AnalysisError::Config("no temperature logits".into()));
    }
    Ok(heads::squash_temperature(mu, config))
}

/// Per-position outputs of one dropout-free pass over a single sequence.
pub(crate) struct SequenceOutputs {
    /// `[T, V]`.
    pub probs: Tensor,
    /// `[T, V]` for a contextual model.
    pub temperature: Option<Tensor>,
}

pub(crate) fn single_row_batch(ids: &[usize]) -> CorpusBatch {
    CorpusBatch {
        batch_size: 1,
        bptt: ids.len(),
        inputs: ids.to_vec(),
        targets: vec![0; ids.len()],
        offsets: (0..ids.len()).collect(),
    }
}

pub(crate) fn run_batch(model: &LanguageModel, batch: &CorpusBatch) -> Result<SequenceOutputs, AnalysisError> {
    let mos = &model.config.mos;
    let mut graph = Graph::new();
    let pass = forward(
        &mut graph,
        &model.params,
        &model.config,
        batch,
        &RecurrentState::zeros(mos, batch.batch_size),
        &DropoutMasks::none(mos),
        false,
    )?;
    Ok(SequenceOutputs {
        probs: graph.value(pass.head.probs).clone(),
        temperature: pass.head.temperature.map(|t| graph.value(t).clone()),
    })
}

/// Runs `ids` from a zero state; row `t` holds the prediction after reading
/// `ids[..=t]`.
pub(crate) fn run_sequence(model: &LanguageModel, ids: &[usize]) -> Result<SequenceOutputs, AnalysisError> {
    if ids.is_empty() {
        return Err(AnalysisError::Config("empty sequence".into()));
    }
    run_batch(model, &single_row_batch(ids))
}
