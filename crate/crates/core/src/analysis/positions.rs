use std::fmt::Write as _;

use super::{run_sequence, AnalysisError};
use crate::model::LanguageModel;

/// Normalized positions: five leading, five middle, five trailing.
pub const SLOTS: usize = 15;
const SEGMENT: usize = 5;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionStats {
    pub slot: usize,
    pub mean: f64,
    /// 95% normal-approximation half-width over per-sentence values.
    pub half_width: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionStatistics {
    pub rows: Vec<PositionStats>,
    pub sentences: usize,
    /// Set when no sentence passed the length filter.
    pub warning: Option<String>,
}

/// Source of the mean temperature at each position of a sentence.
pub trait PositionTemperature {
    /// One value per token of `sentence`: the mean of the temperature vector
    /// used to predict that token.
    fn mean_temperatures(&mut self, sentence: &[usize]) -> Result<Vec<f64>, AnalysisError>;
}

/// A contextual model reads `eos` and then the sentence, so the output that
/// predicts token `j` has seen exactly the tokens before it.
pub struct ModelPositions<'a> {
    pub model: &'a LanguageModel,
    pub eos: usize,
}

impl PositionTemperature for ModelPositions<'_> {
    fn mean_temperatures(&mut self, sentence: &[usize]) -> Result<Vec<f64>, AnalysisError> {
        let mut ids = Vec::with_capacity(sentence.len());
        ids.push(self.eos);
        ids.extend_from_slice(&sentence[..sentence.len() - 1]);
        let tau = run_sequence(self.model, &ids)?
            .temperature
            .ok_or_else(|| AnalysisError::Config("model has no contextual temperature head".into()))?;
        Ok((0..ids.len())
            .map(|r| {
                let row = tau.row(r);
                row.iter().sum::<f64>() / row.len() as f64
            })
            .collect())
    }
}

/// Source positions of the 15 slots for a sentence of length `len >= 15`.
pub fn slot_positions(len: usize) -> [usize; SLOTS] {
    let mid = (len - SEGMENT) / 2;
    let last = len - SEGMENT;
    std::array::from_fn(|s| match s / SEGMENT {
        0 => s,
        1 => mid + s - SEGMENT,
        _ => last + s - 2 * SEGMENT,
    })
}

/// Splits `stream` at `eos` and keeps sentences with `min_len < L < max_len`.
fn sentences(stream: &[usize], eos: usize, min_len: usize, max_len: usize) -> Vec<&[usize]> {
    stream
        .split(|&t| t == eos)
        .filter(|s| s.len() > min_len && s.len() < max_len)
        .collect()
}

/// Per-slot mean and confidence half-width of the sentence-level mean
/// temperature, over the sentences of `stream` passing the length filter.
/// Sums are taken over sorted values so sentence order does not matter.
pub fn position_statistics<S: PositionTemperature>(
    source: &mut S,
    stream: &[usize],
    eos: usize,
    min_len: usize,
    max_len: usize,
) -> Result<PositionStatistics, AnalysisError> {
    if min_len + 1 < SLOTS {
        return Err(AnalysisError::Config(format!(
            "minimum length {min_len} admits sentences shorter than {SLOTS}"
        )));
    }
    let kept = sentences(stream, eos, min_len, max_len);
    if kept.is_empty() {
        return Ok(PositionStatistics {
            rows: Vec::new(),
            sentences: 0,
            warning: Some(format!(
                "no sentences with {min_len} < length < {max_len}; nothing to report"
            )),
        });
    }
    let mut per_slot: Vec<Vec<f64>> = (0..SLOTS).map(|_| Vec::with_capacity(kept.len())).collect();
    for s in &kept {
        let temps = source.mean_temperatures(s)?;
        if temps.len() != s.len() {
            return Err(AnalysisError::Config(format!(
                "{} temperatures for a sentence of {}",
                temps.len(),
                s.len()
            )));
        }
        for (slot, pos) in slot_positions(s.len()).into_iter().enumerate() {
            per_slot[slot].push(temps[pos]);
        }
    }
    let rows = per_slot
        .into_iter()
        .enumerate()
        .map(|(slot, mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if v[0] == v[n - 1] {
                return PositionStats {
                    slot,
                    mean: v[0],
                    half_width: 0.0,
                    count: n,
                };
            }
            let mean = v.iter().sum::<f64>() / n as f64;
            let half_width = {
                let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
                dev.sort_by(f64::total_cmp);
                let var = dev.iter().sum::<f64>() / (n - 1) as f64;
                Z95 * (var / n as f64).sqrt()
            };
            PositionStats {
                slot,
                mean,
                half_width,
                count: n,
            }
        })
        .collect();
    Ok(PositionStatistics {
        rows,
        sentences: kept.len(),
        warning: None,
    })
}

/// `slot`, `mean`, `half_width`, `count` columns, tab-separated with a header.
pub fn positions_table(stats: &PositionStatistics) -> String {
    let mut out = String::from("slot\tmean\thalf_width\tcount\n");
    for r in &stats.rows {
        let _ = writeln!(out, "{}\t{:.9}\t{:.9}\t{}", r.slot, r.mean, r.half_width, r.count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TemperatureConfig, TemperatureMode};
    use crate::trainer::tests::tiny_model;
    use proptest::prelude::*;

    const EOS: usize = 1;

    struct Constant(f64);

    impl PositionTemperature for Constant {
        fn mean_temperatures(&mut self, s: &[usize]) -> Result<Vec<f64>, AnalysisError> {
            Ok(vec![self.0; s.len()])
        }
    }

    /// Temperature depends on the tokens so sentences differ.
    struct TokenSum;

    impl PositionTemperature for TokenSum {
        fn mean_temperatures(&mut self, s: &[usize]) -> Result<Vec<f64>, AnalysisError> {
            Ok(s.iter().enumerate().map(|(i, &t)| 2.0 + ((t * 7 + i) % 13) as f64 / 7.0).collect())
        }
    }

    fn corpus(lengths: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for (k, &l) in lengths.iter().enumerate() {
            out.extend((0..l).map(|i| 2 + (i * 3 + k) % 9));
            out.push(EOS);
        }
        out
    }

    #[test]
    fn twenty_token_sentence_slots() {
        let want: Vec<usize> = (0..5).chain(7..12).chain(15..20).collect();
        assert_eq!(slot_positions(20).to_vec(), want);
    }

    #[test]
    fn length_filter_is_strict() {
        let s = corpus(&[14, 15, 16, 24, 25]);
        let kept = sentences(&s, EOS, 15, 25);
        assert_eq!(kept.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![16, 24]);
    }

    #[test]
    fn constant_source_gives_flat_profile() {
        let stats = position_statistics(&mut Constant(2.5), &corpus(&[16, 20, 18]), EOS, 15, 25).unwrap();
        assert_eq!(stats.rows.len(), SLOTS);
        assert_eq!(stats.sentences, 3);
        for r in &stats.rows {
            assert_eq!(r.mean, 2.5);
            assert_eq!(r.half_width, 0.0);
            assert_eq!(r.count, 3);
        }
        assert_eq!(positions_table(&stats).lines().count(), 16);
    }

    #[test]
    fn no_qualifying_sentence_warns() {
        let stats = position_statistics(&mut Constant(2.5), &corpus(&[3, 14, 30]), EOS, 15, 25).unwrap();
        assert!(stats.rows.is_empty());
        assert!(stats.warning.is_some());
    }

    #[test]
    fn model_source_is_in_bounds() {
        let m = tiny_model(12, TemperatureMode::Contextual(TemperatureConfig::bounded(4)), 3);
        let mut src = ModelPositions { model: &m, eos: EOS };
        let stats = position_statistics(&mut src, &corpus(&[17, 22]), EOS, 15, 25).unwrap();
        for r in &stats.rows {
            assert!(r.mean > 2.0 && r.mean < 4.0 && r.half_width >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn invariant_to_sentence_order(
            lengths in proptest::collection::vec(14usize..27, 1..12),
            rot in 0usize..12,
        ) {
            let k = rot % lengths.len();
            // Rebuild each sentence with its own content so only order changes.
            let build = |ls: &[usize], order: &[usize]| {
                let mut out = Vec::new();
                for &k in order {
                    out.extend((0..ls[k]).map(|i| 2 + (i * 3 + k) % 9));
                    out.push(EOS);
                }
                out
            };
            let ids: Vec<usize> = (0..lengths.len()).collect();
            let mut perm = ids.clone();
            perm.rotate_left(k);
            perm.reverse();
            let a = position_statistics(&mut TokenSum, &build(&lengths, &ids), EOS, 15, 25).unwrap();
            let b = position_statistics(&mut TokenSum, &build(&lengths, &perm), EOS, 15, 25).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
