use super::CorpusError;

/// One truncated-BPTT window: `batch_size` rows of `bptt` consecutive tokens.
///
/// Row `b` continues where row `b` of the previous batch stopped, so the
/// recurrent state can be carried over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusBatch {
    pub batch_size: usize,
    pub bptt: usize,
    /// Row-major `[batch_size, bptt]`.
    pub inputs: Vec<usize>,
    /// `targets[b][t]` is the token after `inputs[b][t]` in the stream.
    pub targets: Vec<usize>,
    /// Stream offset of each input token, row-major like `inputs`.
    pub offsets: Vec<usize>,
}

impl CorpusBatch {
    pub fn input(&self, b: usize, t: usize) -> usize {
        self.inputs[b * self.bptt + t]
    }

    pub fn target(&self, b: usize, t: usize) -> usize {
        self.targets[b * self.bptt + t]
    }

    /// Inputs at timestep `t` for every row.
    pub fn inputs_at(&self, t: usize) -> Vec<usize> {
        (0..self.batch_size).map(|b| self.input(b, t)).collect()
    }

    /// Targets in time-major order (`t * batch_size + b`), matching the row
    /// layout of the model's per-position outputs.
    pub fn targets_time_major(&self) -> Vec<usize> {
        (0..self.bptt)
            .flat_map(|t| (0..self.batch_size).map(move |b| (b, t)))
            .map(|(b, t)| self.target(b, t))
            .collect()
    }

    pub fn positions(&self) -> usize {
        self.batch_size * self.bptt
    }
}

/// Token accounting for [`make_batches`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSummary {
    /// Stream positions used as inputs.
    pub consumed: usize,
    /// Positions never used as an input: the tail of each row plus the
    /// stream remainder that does not fill a row.
    pub dropped: usize,
}

/// Splits `stream` into `batch_size` contiguous row segments and cuts them
/// into full windows of `bptt` tokens; partial windows are dropped.
pub fn make_batches(
    stream: &[usize],
    batch_size: usize,
    bptt: usize,
) -> Result<(Vec<CorpusBatch>, BatchSummary), CorpusError> {
    if batch_size == 0 || bptt == 0 {
        return Err(CorpusError::Config("batch size and bptt must be positive".into()));
    }
    if stream.len() <= batch_size * 2 {
        return Err(CorpusError::Config(format!(
            "stream of {} tokens is too short for batch size {batch_size}",
            stream.len()
        )));
    }
    let seg = stream.len() / batch_size;
    let windows = (seg - 1) / bptt;
    if windows == 0 {
        return Err(CorpusError::Config(format!(
            "rows of {seg} tokens cannot hold one window of {bptt}"
        )));
    }
    let mut batches = Vec::with_capacity(windows);
    for w in 0..windows {
        let mut inputs = Vec::with_capacity(batch_size * bptt);
        let mut targets = Vec::with_capacity(batch_size * bptt);
        let mut offsets = Vec::with_capacity(batch_size * bptt);
        for b in 0..batch_size {
            let start = b * seg + w * bptt;
            inputs.extend_from_slice(&stream[start..start + bptt]);
            targets.extend_from_slice(&stream[start + 1..start + bptt + 1]);
            offsets.extend(start..start + bptt);
        }
        batches.push(CorpusBatch {
            batch_size,
            bptt,
            inputs,
            targets,
            offsets,
        });
    }
    let consumed = windows * bptt * batch_size;
    Ok((
        batches,
        BatchSummary {
            consumed,
            dropped: stream.len() - consumed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_ids_batch_two_bptt_two() {
        let stream: Vec<usize> = (0..10).collect();
        let (batches, summary) = make_batches(&stream, 2, 2).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(summary.dropped, 2);
        assert_eq!(batches[0].inputs, vec![0, 1, 5, 6]);
        assert_eq!(batches[0].targets, vec![1, 2, 6, 7]);
        assert_eq!(batches[1].inputs, vec![2, 3, 7, 8]);
        assert_eq!(batches[1].targets, vec![3, 4, 8, 9]);
        assert_eq!(batches[1].targets_time_major(), vec![3, 8, 4, 9]);
    }

    #[test]
    fn single_batch_covers_stream() {
        let stream: Vec<usize> = (0..9).map(|i| i % 4).collect();
        let (batches, summary) = make_batches(&stream, 1, 8).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].inputs, stream[..8]);
        assert_eq!(batches[0].targets, stream[1..]);
        assert_eq!(summary.consumed, 8);
    }

    #[test]
    fn short_streams_are_config_errors() {
        assert!(make_batches(&[1, 2, 3, 4], 2, 1).is_err());
        assert!(make_batches(&[1, 2, 3, 4, 5], 2, 2).is_err());
        assert!(make_batches(&[1, 2, 3], 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn conservation_and_shift(len in 5usize..300, batch in 1usize..6, bptt in 1usize..12) {
            let stream: Vec<usize> = (0..len).map(|i| (i * 7919) % 101).collect();
            match make_batches(&stream, batch, bptt) {
                Ok((batches, summary)) => {
                    let used: usize = batches.iter().map(|b| b.positions()).sum();
                    prop_assert_eq!(used, summary.consumed);
                    prop_assert_eq!(summary.consumed + summary.dropped, len);
                    for bt in &batches {
                        for i in 0..bt.positions() {
                            prop_assert_eq!(bt.inputs[i], stream[bt.offsets[i]]);
                            prop_assert_eq!(bt.targets[i], stream[bt.offsets[i] + 1]);
                        }
                    }
                    for pair in batches.windows(2) {
                        for b in 0..batch {
                            prop_assert_eq!(pair[1].offsets[b * bptt], pair[0].offsets[b * bptt + bptt - 1] + 1);
                        }
                    }
                }
                Err(_) => prop_assert!(len <= 2 * batch || (len / batch - 1) / bptt == 0),
            }
        }
    }
}
