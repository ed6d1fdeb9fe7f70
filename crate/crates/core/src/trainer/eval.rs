use super::TrainError;
use crate::autodiff::Graph;
use crate::corpus::CorpusBatch;
use crate::model::{forward, DropoutMasks, LanguageModel, RecurrentState};
use crate::objective::nll_sum;

/// Anything that assigns next-token probabilities to a stream of batches.
pub trait SequenceScorer {
    /// Forget any carried context.
    fn reset(&mut self) {}

    /// Summed `-ln P(target)` over every position of `batch`, with the
    /// cross-entropy log floor applied.
    fn score(&mut self, batch: &CorpusBatch) -> Result<f64, TrainError>;
}

/// Scores with a model, dropout off, carrying the recurrent state from one
/// batch to the next.
pub struct ModelScorer<'a> {
    model: &'a LanguageModel,
    state: Option<RecurrentState>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a LanguageModel) -> Self {
        Self { model, state: None }
    }
}

impl SequenceScorer for ModelScorer<'_> {
    fn reset(&mut self) {
        self.state = None;
    }

    fn score(&mut self, batch: &CorpusBatch) -> Result<f64, TrainError> {
        let mos = &self.model.config.mos;
        let state = match self.state.take() {
            Some(s) if s.layers[0].0.shape()[0] == batch.batch_size => s,
            _ => RecurrentState::zeros(mos, batch.batch_size),
        };
        let mut graph = Graph::new();
        let pass = forward(
            &mut graph,
            &self.model.params,
            &self.model.config,
            batch,
            &state,
            &DropoutMasks::none(mos),
            false,
        )?;
        let (nll, _) = nll_sum(graph.value(pass.head.probs), &batch.targets_time_major());
        self.state = Some(pass.backbone.state);
        Ok(nll)
    }
}

/// `exp` of the mean negative log-likelihood over all target positions.
pub fn evaluate_perplexity<S: SequenceScorer>(
    scorer: &mut S,
    batches: &[CorpusBatch],
) -> Result<f64, TrainError> {
    scorer.reset();
    let mut total = 0.0;
    let mut count = 0usize;
    for b in batches {
        total += scorer.score(b)?;
        count += b.positions();
    }
    if count == 0 {
        return Err(TrainError::Config("no evaluation positions".into()));
    }
    Ok((total / count as f64).exp())
}

pub fn evaluate_model(model: &LanguageModel, batches: &[CorpusBatch]) -> Result<f64, TrainError> {
    evaluate_perplexity(&mut ModelScorer::new(model), batches)
}
