//! Text preprocessing, vocabulary construction, and truncated-BPTT batching.
//!
//! On disk a prepared corpus is a directory holding `train.txt`,
//! `valid.txt`, `test.txt` (one sentence per line, tokens separated by single
//! spaces, `<eos>` implied by the newline) and `vocab.tsv` (`token<TAB>count`
//! in rank order). Both formats are byte-identical for identical inputs.

mod batch;
mod preprocess;
pub mod synthetic;
mod vocab;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use batch::{make_batches, BatchSummary, CorpusBatch};
pub use preprocess::{join_tokens, preprocess, PreprocessRules};
pub use vocab::Vocabulary;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const NUM: &str = "N";
pub const SPECIALS: [&str; 3] = [UNK, EOS, NUM];

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed corpus file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Rules that only turn newlines into `<eos>`; used to read token files.
pub fn token_file_rules() -> PreprocessRules {
    PreprocessRules {
        lowercase: false,
        numbers_to_placeholder: false,
        newline_to_eos: true,
        strip_punctuation: false,
    }
}

/// Encoded splits plus their shared vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedCorpus {
    /// Preprocesses raw splits and builds the vocabulary from `train`.
    pub fn from_raw(train: &str, valid: &str, test: &str, cap: usize) -> Result<Self, CorpusError> {
        let rules = PreprocessRules::default();
        let train_tokens = preprocess(train, rules);
        let vocab = Vocabulary::build(&train_tokens, cap)?;
        Ok(Self {
            train: vocab.encode(&train_tokens),
            valid: vocab.encode(&preprocess(valid, rules)),
            test: vocab.encode(&preprocess(test, rules)),
            vocab,
        })
    }

    pub fn split(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Loads a directory written by [`PreparedCorpus::save`]. Missing
    /// `valid`/`test` files load as empty splits.
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let vpath = dir.join(VOCAB_FILE);
        let vocab = Vocabulary::from_tsv(&fs::read_to_string(&vpath).map_err(io_err(&vpath))?)?;
        let mut splits = Vec::new();
        for name in SPLITS {
            let path = dir.join(format!("{name}.txt"));
            let stream = if path.exists() {
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                vocab.encode(&preprocess(&text, token_file_rules()))
            } else if name == "train" {
                return Err(CorpusError::Config(format!("{} is missing", path.display())));
            } else {
                Vec::new()
            };
            splits.push(stream);
        }
        let test = splits.pop().unwrap();
        let valid = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Ok(Self {
            vocab,
            train,
            valid,
            test,
        })
    }

    /// Writes the vocabulary and every non-empty split.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let vpath = dir.join(VOCAB_FILE);
        fs::write(&vpath, self.vocab.to_tsv()).map_err(io_err(&vpath))?;
        for name in SPLITS {
            let stream = self.split(name).unwrap();
            if stream.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = stream.iter().map(|&i| self.vocab.decode(i)).collect();
            let path = dir.join(format!("{name}.txt"));
            fs::write(&path, join_tokens(&tokens)).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

/// Reads raw splits from `input` and writes a prepared corpus to `out`.
///
/// `input` is either a single file (used as the training split) or a
/// directory containing `train.txt` and optionally `valid.txt` and
/// `test.txt`.
pub fn prepare_corpus(input: &Path, out: &Path, cap: usize) -> Result<PreparedCorpus, CorpusError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(io_err(p));
    let corpus = if input.is_dir() {
        let opt = |name: &str| -> Result<String, CorpusError> {
            let p = input.join(format!("{name}.txt"));
            if p.exists() {
                read(&p)
            } else {
                Ok(String::new())
            }
        };
        let train_path = input.join("train.txt");
        PreparedCorpus::from_raw(&read(&train_path)?, &opt("valid")?, &opt("test")?, cap)?
    } else {
        PreparedCorpus::from_raw(&read(input)?, "", "", cap)?
    };
    corpus.save(out)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = PreparedCorpus::from_raw(
            "The cat sat .\nThe dog ran 3 miles\n",
            "the cat ran\n",
            "a bird\n",
            10,
        )
        .unwrap();
        c.save(dir.path()).unwrap();
        let back = PreparedCorpus::load(dir.path()).unwrap();
        assert_eq!(back.vocab, c.vocab);
        assert_eq!(back.train, c.train);
        assert_eq!(back.valid, c.valid);
        assert_eq!(back.test, c.test);
        let bird = back.test[1];
        assert_eq!(bird, back.vocab.unk());
    }
}
