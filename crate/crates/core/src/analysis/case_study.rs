use std::fmt::Write as _;

use super::{run_sequence, AnalysisError};
use crate::model::LanguageModel;

/// Predictions of two models after reading `context[..=position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub position: usize,
    /// Last context token read.
    pub token: usize,
    /// `(token, probability)`, most probable first.
    pub top_a: Vec<(usize, f64)>,
    pub top_b: Vec<(usize, f64)>,
    /// Model A's temperature for every token shown in either list, in
    /// ascending token order; empty when model A has no contextual head.
    pub tau_a: Vec<(usize, f64)>,
}

/// Largest `k` entries, ties broken by lower index.
fn top_k(row: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, row[i])).collect()
}

pub fn case_study_topk(
    model_a: &LanguageModel,
    model_b: &LanguageModel,
    context: &[usize],
    k: usize,
) -> Result<Vec<CaseRecord>, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::Config("k must be at least 1".into()));
    }
    if model_a.config.mos.vocab_size != model_b.config.mos.vocab_size {
        return Err(AnalysisError::Config("models have different vocabularies".into()));
    }
    let a = run_sequence(model_a, context)?;
    let b = run_sequence(model_b, context)?;
    Ok(context
        .iter()
        .enumerate()
        .map(|(t, &token)| {
            let top_a = top_k(a.probs.row(t), k);
            let top_b = top_k(b.probs.row(t), k);
            let tau_a = match &a.temperature {
                Some(tau) => {
                    let mut shown: Vec<usize> = top_a.iter().chain(&top_b).map(|&(i, _)| i).collect();
                    shown.sort_unstable();
                    shown.dedup();
                    shown.into_iter().map(|i| (i, tau.row(t)[i])).collect()
                }
                None => Vec::new(),
            };
            CaseRecord {
                position: t,
                token,
                top_a,
                top_b,
                tau_a,
            }
        })
        .collect())
}

/// `position`, `token`, `model`, `rank`, `candidate`, `probability`, `tau`;
/// one line per ranked candidate, `tau` from model A (empty if absent).
pub fn case_study_table(records: &[CaseRecord], decode: impl Fn(usize) -> String) -> String {
    let mut out = String::from("position\ttoken\tmodel\trank\tcandidate\tprobability\ttau\n");
    for r in records {
        for (label, list) in [("A", &r.top_a), ("B", &r.top_b)] {
            for (rank, &(cand, p)) in list.iter().enumerate() {
                let tau = r
                    .tau_a
                    .iter()
                    .find(|(i, _)| *i == cand)
                    .map(|(_, t)| format!("{t:.6}"))
                    .unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{}\t{}\t{label}\t{}\t{}\t{p:.6}\t{tau}",
                    r.position,
                    decode(r.token),
                    rank + 1,
                    decode(cand)
                );
            }
        }
    }
    out
}
