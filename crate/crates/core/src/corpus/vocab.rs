use std::collections::HashMap;

use super::{CorpusError, EOS, NUM, SPECIALS, UNK};
use crate::rng::{fnv1a_extend, fnv1a};

/// Token/index map ordered by descending frequency (index 0 is the most
/// frequent token). Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent tokens; special tokens are always kept.
    ///
    /// Ties in frequency are broken lexicographically.
    pub fn build<S: AsRef<str>>(tokens: &[S], cap: usize) -> Result<Self, CorpusError> {
        if cap < SPECIALS.len() {
            return Err(CorpusError::Config(format!(
                "vocabulary cap {cap} is below the {} special tokens",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
        for s in SPECIALS {
            counts.entry(s).or_default();
        }

        let by_rank = |a: &(&str, u64), b: &(&str, u64)| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0));
        let mut ordinary: Vec<(&str, u64)> = counts
            .iter()
            .filter(|(t, _)| !SPECIALS.contains(t))
            .map(|(&t, &c)| (t, c))
            .collect();
        ordinary.sort_by(by_rank);
        ordinary.truncate(cap - SPECIALS.len());

        let mut kept: Vec<(&str, u64)> = SPECIALS.iter().map(|&s| (s, counts[s])).collect();
        kept.extend(ordinary);
        kept.sort_by(by_rank);
        Self::from_ranked(kept.into_iter().map(|(t, c)| (t.to_string(), c)).collect())
    }

    /// Rebuilds a vocabulary from `(token, count)` pairs already in rank order.
    pub fn from_ranked(entries: Vec<(String, u64)>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (t, _)) in entries.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::Format(format!("duplicate token {t:?}")));
            }
        }
        for w in entries.windows(2) {
            if w[0].1 < w[1].1 {
                return Err(CorpusError::Format(format!(
                    "token {:?} ranked above more frequent {:?}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(missing) = SPECIALS.iter().find(|s| !index.contains_key(**s)) {
            return Err(CorpusError::Format(format!("missing special token {missing}")));
        }
        let (tokens, counts) = entries.into_iter().unzip();
        Ok(Self {
            tokens,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, rank: usize) -> u64 {
        self.counts[rank]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn unk(&self) -> usize {
        self.index[UNK]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn num(&self) -> usize {
        self.index[NUM]
    }

    /// Index of `token`, or of `<unk>` when it was not retained.
    pub fn encode_token(&self, token: &str) -> usize {
        self.get(token).unwrap_or_else(|| self.unk())
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode_token(t.as_ref())).collect()
    }

    pub fn decode(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    /// 64-bit FNV-1a over the rank-ordered tokens, each followed by `\n`.
    pub fn digest(&self) -> u64 {
        self.tokens.iter().fold(fnv1a(b""), |h, t| {
            fnv1a_extend(fnv1a_extend(h, t.as_bytes()), b"\n")
        })
    }

    /// `token<TAB>count` lines in rank order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| CorpusError::Format(format!("line {}: missing tab", n + 1)))?;
            let count = count
                .parse()
                .map_err(|_| CorpusError::Format(format!("line {}: bad count {count:?}", n + 1)))?;
            entries.push((tok.to_string(), count));
        }
        Self::from_ranked(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn small_vocab_adds_missing_specials() {
        let v = Vocabulary::build(&toks("x y z x"), 10).unwrap();
        assert_eq!(v.len(), 3 + SPECIALS.len());
        let v = Vocabulary::build(&toks("x y <eos> x"), 10).unwrap();
        assert_eq!(v.len(), 2 + SPECIALS.len());
        assert_eq!(v.decode(0), "x");
    }

    #[test]
    fn cap_drops_least_frequent() {
        let words = toks("a a a a a b b b b b c");
        let v = Vocabulary::build(&words, SPECIALS.len() + 2).unwrap();
        assert!(v.get("a").is_some() && v.get("b").is_some());
        assert_eq!(v.get("c"), None);
        assert_eq!(v.encode_token("c"), v.unk());
        assert_eq!(v.decode(0), "a");
        assert_eq!(v.decode(1), "b");
    }

    #[test]
    fn ties_at_cap_break_lexicographically() {
        let v = Vocabulary::build(&toks("q p r"), SPECIALS.len() + 2).unwrap();
        assert!(v.get("p").is_some() && v.get("q").is_some());
        assert_eq!(v.get("r"), None);
    }

    #[test]
    fn cap_below_specials_is_config_error() {
        assert!(matches!(
            Vocabulary::build(&toks("a"), 2),
            Err(CorpusError::Config(_))
        ));
    }

    #[test]
    fn ten_thousand_cap() {
        let words: Vec<String> = (0..12_000).map(|i| format!("w{i}")).collect();
        let v = Vocabulary::build(&words, 10_000).unwrap();
        assert_eq!(v.len(), 10_000);
    }

    #[test]
    fn tsv_round_trip_and_digest() {
        let v = Vocabulary::build(&toks("the cat the N <eos> sat"), 50).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.digest(), v.digest());
        let other = Vocabulary::build(&toks("the dog"), 50).unwrap();
        assert_ne!(other.digest(), v.digest());
    }

    #[test]
    fn malformed_tsv() {
        assert!(Vocabulary::from_tsv("a\t1\nb 2\n").is_err());
        assert!(Vocabulary::from_tsv("a\t1\n").is_err());
    }

    proptest! {
        #[test]
        fn invariants(words in proptest::collection::vec("[a-e]{1,2}", 0..200), cap in 3usize..20) {
            let v = Vocabulary::build(&words, cap).unwrap();
            prop_assert!(v.len() <= cap);
            for s in SPECIALS { prop_assert!(v.get(s).is_some()); }
            for i in 0..v.len() {
                prop_assert_eq!(v.get(v.decode(i)), Some(i));
                if i + 1 < v.len() { prop_assert!(v.count(i) >= v.count(i + 1)); }
            }
            for w in &words {
                let e = v.encode_token(w);
                if v.get(w).is_some() { prop_assert_eq!(v.decode(e), w.as_str()); }
                else { prop_assert_eq!(e, v.unk()); }
            }
        }
    }
}
