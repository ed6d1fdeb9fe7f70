//! Deterministic synthetic raw text with topical and syntactic structure.
//!
//! Used for desk-scale experiments where a licensed treebank is not
//! available. Sentences follow a handful of templates; content words come
//! from per-topic lexicons with Zipfian frequencies and the topic persists
//! across consecutive sentences, so longer contexts carry information.

use rand::Rng;

use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub nouns_per_topic: usize,
    pub verbs_per_topic: usize,
    pub adjectives_per_topic: usize,
    /// Probability of switching topic between sentences.
    pub topic_switch: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            topics: 8,
            nouns_per_topic: 60,
            verbs_per_topic: 30,
            adjectives_per_topic: 20,
            topic_switch: 0.2,
            seed: 1,
        }
    }
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const DETERMINERS: [&str; 6] = ["the", "a", "this", "every", "some", "that"];
const PREPOSITIONS: [&str; 6] = ["in", "on", "near", "with", "under", "from"];
const CONNECTIVES: [&str; 4] = ["and", "but", "while", "because"];

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjectives: Vec<String>,
}

fn make_word(id: usize, syllables: usize, suffix: &str) -> String {
    let mut w = String::new();
    let mut x = id;
    for _ in 0..syllables {
        w.push_str(ONSETS[x % ONSETS.len()]);
        x /= ONSETS.len();
        w.push_str(VOWELS[x % VOWELS.len()]);
        x /= VOWELS.len();
    }
    w.push_str(suffix);
    w
}

/// Zipf-like draw of an index in `0..n`.
fn zipf(rng: &mut StreamRng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
    let mut u = rng.gen::<f64>() * total;
    for r in 1..=n {
        u -= 1.0 / r as f64;
        if u <= 0.0 {
            return r - 1;
        }
    }
    n - 1
}

fn pick<'a>(rng: &mut StreamRng, words: &'a [&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

/// Generates raw text of at least `min_tokens` whitespace-separated words,
/// one sentence per line, with capitalization, punctuation and digits for
/// the preprocessor to normalize.
pub fn generate(spec: &SyntheticSpec, min_tokens: usize, stream_name: &str) -> String {
    let lexicons: Vec<Lexicon> = (0..spec.topics)
        .map(|t| {
            let base = t * 1000;
            Lexicon {
                nouns: (0..spec.nouns_per_topic).map(|i| make_word(base + i, 2, "")).collect(),
                verbs: (0..spec.verbs_per_topic).map(|i| make_word(base + 300 + i, 2, "s")).collect(),
                adjectives: (0..spec.adjectives_per_topic)
                    .map(|i| make_word(base + 600 + i, 2, "y"))
                    .collect(),
            }
        })
        .collect();

    let mut rng = stream(spec.seed, stream_name);
    let mut topic = 0;
    let mut out = String::new();
    let mut count = 0;
    while count < min_tokens {
        if rng.gen::<f64>() < spec.topic_switch {
            topic = rng.gen_range(0..spec.topics);
        }
        let lex = &lexicons[topic];
        let mut words: Vec<String> = Vec::new();
        let noun_phrase = |rng: &mut StreamRng, words: &mut Vec<String>| {
            words.push(pick(rng, &DETERMINERS).to_string());
            if rng.gen::<f64>() < 0.4 {
                words.push(lex.adjectives[zipf(rng, lex.adjectives.len())].clone());
            }
            words.push(lex.nouns[zipf(rng, lex.nouns.len())].clone());
        };
        noun_phrase(&mut rng, &mut words);
        words.push(lex.verbs[zipf(&mut rng, lex.verbs.len())].clone());
        noun_phrase(&mut rng, &mut words);
        while rng.gen::<f64>() < 0.6 && words.len() < 30 {
            words.push(pick(&mut rng, &PREPOSITIONS).to_string());
            noun_phrase(&mut rng, &mut words);
        }
        if rng.gen::<f64>() < 0.3 {
            words.push(pick(&mut rng, &CONNECTIVES).to_string());
            noun_phrase(&mut rng, &mut words);
            words.push(lex.verbs[zipf(&mut rng, lex.verbs.len())].clone());
        }
        if rng.gen::<f64>() < 0.15 {
            words.push(format!("{}", rng.gen_range(1..2000)));
            words.push(lex.nouns[zipf(&mut rng, lex.nouns.len())].clone());
        }
        count += words.len();
        let mut first = words[0].clone();
        first[..1].make_ascii_uppercase();
        words[0] = first;
        out.push_str(&words.join(" "));
        out.push_str(" .\n");
    }
    out
}
