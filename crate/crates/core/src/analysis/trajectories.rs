use std::fmt::Write as _;

use super::{run_batch, AnalysisError};
use crate::corpus::CorpusBatch;
use crate::trainer::Checkpoint;

/// Mean temperature of one vocabulary entry over the probe positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub token: usize,
    pub epoch: u32,
    pub temperature: f64,
}

/// One record per `(checkpoint, token)`, in checkpoint order then token order.
///
/// Every checkpoint must carry `vocab_digest` and a contextual temperature
/// head. Probe batches are each run from a zero state with dropout off.
pub fn temperature_trajectories(
    checkpoints: &[Checkpoint],
    vocab_digest: u64,
    probe: &[CorpusBatch],
    tokens: &[usize],
) -> Result<Vec<TrajectoryRecord>, AnalysisError> {
    if tokens.is_empty() {
        return Err(AnalysisError::Config("token set is empty".into()));
    }
    if probe.is_empty() {
        return Err(AnalysisError::Config("probe set is empty".into()));
    }
    let mut records = Vec::with_capacity(checkpoints.len() * tokens.len());
    for ckpt in checkpoints {
        ckpt.check_digest(vocab_digest)?;
        let v = ckpt.model.config.mos.vocab_size;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= v) {
            return Err(AnalysisError::Config(format!("token {bad} outside vocabulary of {v}")));
        }
        let mut sums = vec![0.0; tokens.len()];
        let mut positions = 0usize;
        for batch in probe {
            let out = run_batch(&ckpt.model, batch)?;
            let tau = out.temperature.ok_or_else(|| {
                AnalysisError::Config("checkpoint has no contextual temperature head".into())
            })?;
            let rows = tau.shape()[0];
            for r in 0..rows {
                let row = tau.row(r);
                for (s, &t) in sums.iter_mut().zip(tokens) {
                    *s += row[t];
                }
            }
            positions += rows;
        }
        for (&token, s) in tokens.iter().zip(sums) {
            records.push(TrajectoryRecord {
                token,
                epoch: ckpt.optimizer.epoch,
                temperature: s / positions as f64,
            });
        }
    }
    Ok(records)
}

/// `token`, `epoch`, `temperature` columns, tab-separated with a header.
pub fn trajectories_table(records: &[TrajectoryRecord], decode: impl Fn(usize) -> String) -> String {
    let mut out = String::from("token\tepoch\ttemperature\n");
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{:.9}", decode(r.token), r.epoch, r.temperature);
    }
    out
}
