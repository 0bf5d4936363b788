use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MAX_VOCAB: usize = 50_000;
/// Longest accepted command, in tokens.
pub const MAX_COMMAND_TOKENS: usize = 16;

/// Lowercase and split on anything that is not alphanumeric.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Dense token ids with `PAD = 0` and `UNK = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from sentences; tokens ordered by descending frequency, then lexicographically.
    pub fn from_corpus<S: AsRef<str>>(sentences: &[S]) -> Result<Vocabulary> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in sentences {
            for w in split_words(s.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        words.truncate(MAX_VOCAB - 2);
        let tokens = ["<pad>".to_string(), "<unk>".to_string()]
            .into_iter()
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < 2 || tokens.len() > MAX_VOCAB {
            return Err(Error::config(format!(
                "vocabulary size {} out of range",
                tokens.len()
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate token '{t}'")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Token ids of `text`; out-of-vocabulary words map to [`UNK`].
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let words = split_words(text);
        if words.is_empty() {
            return Err(Error::usage(format!("no tokens in {text:?}")));
        }
        Ok(words.iter().map(|w| self.id(w)).collect())
    }

    /// Newline-separated token list.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.tokens.join("\n").into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Vocabulary> {
        let text =
            std::str::from_utf8(bytes).map_err(|_| Error::format("vocabulary is not UTF-8"))?;
        Self::from_tokens(text.split('\n').map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_corpus(&["build a supply depot", "build a barracks", "train a marine"])
            .unwrap()
    }

    #[test]
    fn tokenizes_plain_command() {
        let v = vocab();
        let ids = v.tokenize("Build a supply depot").unwrap();
        let words: Vec<&str> = ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(words, ["build", "a", "supply", "depot"]);
    }

    #[test]
    fn normalizes_case_spacing_and_punctuation() {
        let v = vocab();
        let ids = v.tokenize("BUILD   a Barracks!").unwrap();
        let words: Vec<&str> = ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(words, ["build", "a", "barracks"]);
    }

    #[test]
    fn unknown_word_is_unk() {
        assert_eq!(vocab().tokenize("flibbertigibbet").unwrap(), vec![UNK]);
    }

    #[test]
    fn empty_text_is_usage_error() {
        assert!(matches!(vocab().tokenize("  !! "), Err(Error::Usage(_))));
    }

    #[test]
    fn frequency_order_and_bytes() {
        let v = vocab();
        assert_eq!(v.token(2), "a");
        assert_eq!(v.token(3), "build");
        assert_eq!(Vocabulary::from_bytes(&v.to_bytes()).unwrap(), v);
    }
}
