use std::fmt::Write as _;

use super::AnalysisError;
use crate::corpus::CorpusBatch;
use crate::model::{LanguageModel, ModelConfig, MoSConfig, TemperatureConfig, TemperatureMode};
use crate::trainer::{evaluate_model, train, EpochRecord, OptimizerState, TrainConfig};

/// Shared recipe: every row trains the same backbone sizes from the same
/// seed (`train.seed`) and differs only in its temperature mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRecipe {
    pub mos: MoSConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub train: &'a [CorpusBatch],
    pub valid: &'a [CorpusBatch],
    /// May be empty; the test perplexity is then `NaN`.
    pub test: &'a [CorpusBatch],
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub temperature: TemperatureMode,
    pub epochs: Vec<EpochRecord>,
    pub valid_ppl: f64,
    pub test_ppl: f64,
    pub param_digest: u64,
}

/// Trains one model per temperature mode and evaluates the final weights.
pub fn run_ablation(
    modes: &[TemperatureMode],
    recipe: &AblationRecipe,
    data: AblationData<'_>,
) -> Result<Vec<AblationRow>, AnalysisError> {
    if data.valid.is_empty() {
        return Err(AnalysisError::Config("ablation needs validation batches".into()));
    }
    for m in modes {
        m.validate()?;
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &temperature in modes {
        let config = ModelConfig {
            mos: recipe.mos.clone(),
            temperature,
        };
        let mut model = LanguageModel::init(config, recipe.train.seed)?;
        let mut opt = OptimizerState::new(recipe.train.lr);
        let epochs = train(&mut model, data.train, data.valid, &recipe.train, &mut opt, |_, _, _| Ok(()))?;
        let valid_ppl = evaluate_model(&model, data.valid)?;
        let test_ppl = if data.test.is_empty() {
            f64::NAN
        } else {
            evaluate_model(&model, data.test)?
        };
        rows.push(AblationRow {
            label: temperature.label(),
            temperature,
            epochs,
            valid_ppl,
            test_ppl,
            param_digest: model.params.digest(),
        });
    }
    Ok(rows)
}

/// One MoS row per fixed temperature, then one contextual row.
pub fn run_constant_tau_ablation(
    taus: &[f64],
    contextual: TemperatureConfig,
    recipe: &AblationRecipe,
    data: AblationData<'_>,
) -> Result<Vec<AblationRow>, AnalysisError> {
    if taus.is_empty() {
        return Err(AnalysisError::Config("no temperature values given".into()));
    }
    let mut modes: Vec<TemperatureMode> = taus.iter().map(|&t| TemperatureMode::Constant(t)).collect();
    modes.push(TemperatureMode::Contextual(contextual));
    run_ablation(&modes, recipe, data)
}

/// One contextual row per squashing configuration.
pub fn run_normalization_ablation(
    variants: &[TemperatureConfig],
    recipe: &AblationRecipe,
    data: AblationData<'_>,
) -> Result<Vec<AblationRow>, AnalysisError> {
    if variants.is_empty() {
        return Err(AnalysisError::Config("no normalization variants given".into()));
    }
    let modes: Vec<TemperatureMode> = variants.iter().map(|&v| TemperatureMode::Contextual(v)).collect();
    run_ablation(&modes, recipe, data)
}

impl AblationRow {
    /// `label`, `valid_ppl`, `test_ppl`, tab-separated with a header.
    pub fn table(rows: &[AblationRow]) -> String {
        let mut out = String::from("model\tvalid_ppl\ttest_ppl\n");
        for r in rows {
            let _ = writeln!(out, "{}\t{:.4}\t{:.4}", r.label, r.valid_ppl, r.test_ppl);
        }
        out
    }
}
