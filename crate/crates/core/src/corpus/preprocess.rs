//! PTB-style text normalization.

use super::{EOS, NUM, UNK};

/// Rules applied by [`preprocess`]. All enabled by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessRules {
    pub lowercase: bool,
    pub numbers_to_placeholder: bool,
    pub newline_to_eos: bool,
    pub strip_punctuation: bool,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        Self {
            lowercase: true,
            numbers_to_placeholder: true,
            newline_to_eos: true,
            strip_punctuation: true,
        }
    }
}

/// Normalizes raw text into a flat token stream.
///
/// Tokens that already spell a special token (`<unk>`, `<eos>`, `N`) pass
/// through untouched, so running the output back through [`join_tokens`]
/// and `preprocess` is a fixed point.
pub fn preprocess(raw: &str, rules: PreprocessRules) -> Vec<String> {
    let mut out = Vec::new();
    let mut lines = raw.split('\n').peekable();
    while let Some(line) = lines.next() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        for word in line.split_whitespace() {
            if let Some(tok) = normalize_word(word, rules) {
                out.push(tok);
            }
        }
        // Every '\n' terminates a line; text after the last one does not.
        if lines.peek().is_some() && rules.newline_to_eos {
            out.push(EOS.to_string());
        }
    }
    out
}

fn normalize_word(word: &str, rules: PreprocessRules) -> Option<String> {
    if word == UNK || word == EOS || word == NUM {
        return Some(word.to_string());
    }
    let mut w = if rules.lowercase {
        word.to_lowercase()
    } else {
        word.to_string()
    };
    if rules.strip_punctuation {
        w = strip_punctuation(&w);
    }
    if w.is_empty() {
        return None;
    }
    if rules.numbers_to_placeholder && w.chars().all(char::is_numeric) {
        return Some(NUM.to_string());
    }
    Some(w)
}

/// Drops ASCII punctuation except apostrophes touching a letter or digit
/// (`'s`, `n't`) and hyphens between two letters or digits (`single-a-1`).
fn strip_punctuation(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let alnum = |i: Option<usize>| i.and_then(|i| chars.get(i)).is_some_and(|c| c.is_alphanumeric());
    chars
        .iter()
        .enumerate()
        .filter(|&(i, &c)| {
            if !c.is_ascii_punctuation() {
                return true;
            }
            let (prev, next) = (alnum(i.checked_sub(1)), alnum(Some(i + 1)));
            match c {
                '\'' => prev || next,
                '-' => prev && next,
                _ => false,
            }
        })
        .map(|(_, &c)| c)
        .collect()
}

/// Renders a token stream as text: tokens separated by spaces, one line per
/// `<eos>`.
pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut line_start = true;
    for t in tokens {
        let t = t.as_ref();
        if t == EOS {
            out.push('\n');
            line_start = true;
            continue;
        }
        if !line_start {
            out.push(' ');
        }
        out.push_str(t);
        line_start = false;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pp(s: &str) -> Vec<String> {
        preprocess(s, PreprocessRules::default())
    }

    #[test]
    fn four_rules_on_sample() {
        assert_eq!(pp("The cost rose 5 %\n"), ["the", "cost", "rose", "N", "<eos>"]);
    }

    #[test]
    fn empty_input() {
        assert!(pp("").is_empty());
    }

    #[test]
    fn newline_rule_only() {
        assert_eq!(pp("abc\nabc\n"), ["abc", "<eos>", "abc", "<eos>"]);
    }

    #[test]
    fn apostrophes_hyphens_and_mixed_numbers() {
        assert_eq!(
            pp("Moody 's rated it single-a-1 , 30-year bonds -- n't \"ok\" 1,000 3.5\r\n"),
            ["moody", "'s", "rated", "it", "single-a-1", "30-year", "bonds", "n't", "ok", "N", "N", "<eos>"]
        );
    }

    #[test]
    fn specials_pass_through() {
        assert_eq!(pp("<unk> N <eos> x"), ["<unk>", "N", "<eos>", "x"]);
    }

    #[test]
    fn empty_lines_still_emit_eos() {
        assert_eq!(pp("\n\na"), ["<eos>", "<eos>", "a"]);
    }

    proptest! {
        #[test]
        fn idempotent(raw in "[A-Za-z0-9 ,.'%$&\\-\n]{0,80}") {
            let once = pp(&raw);
            let twice = pp(&join_tokens(&once));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn output_is_normalized(raw in "[ -~\n\té]{0,60}") {
            for tok in pp(&raw) {
                if tok == NUM || tok == EOS || tok == UNK { continue; }
                prop_assert!(!tok.chars().any(char::is_uppercase), "{}", tok);
                prop_assert!(!tok.chars().all(char::is_numeric), "{}", tok);
                prop_assert!(!tok.chars().all(|c| c.is_ascii_punctuation()), "{}", tok);
            }
        }
    }
}
