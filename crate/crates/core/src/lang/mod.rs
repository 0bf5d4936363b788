//! Commands, tokenization, word vectors and the recurrent command encoder.

mod corpus;
mod encoder;
mod vocab;
mod word2vec;

pub use corpus::{corpus_vocabulary, paraphrase_corpus, paraphrases, Paraphrase, FILLER};
pub use encoder::{CommandEncoder, COMMAND_DIM};
pub use vocab::{split_words, Vocabulary, MAX_COMMAND_TOKENS, MAX_VOCAB, PAD, UNK};
pub use word2vec::{cosine, train_word2vec, Word2Vec, Word2VecConfig, WORD_DIM};

use crate::error::{Error, Result};

/// The five goals, in narration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Goal {
    Worker,
    Collect,
    Depot,
    Barracks,
    Marine,
}

impl Goal {
    pub const ALL: [Goal; 5] = [
        Goal::Worker,
        Goal::Collect,
        Goal::Depot,
        Goal::Barracks,
        Goal::Marine,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Goal> {
        Self::ALL.get(i).copied()
    }

    pub fn canonical(self) -> &'static str {
        match self {
            Goal::Worker => "build a worker",
            Goal::Collect => "collect resources",
            Goal::Depot => "build a supply depot",
            Goal::Barracks => "build a barracks",
            Goal::Marine => "train a marine",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Goal::Worker => "worker",
            Goal::Collect => "collect",
            Goal::Depot => "depot",
            Goal::Barracks => "barracks",
            Goal::Marine => "marine",
        }
    }

    pub fn from_name(name: &str) -> Option<Goal> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// A tokenized instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub text: String,
    pub tokens: Vec<usize>,
    pub goal: Option<Goal>,
}

impl Command {
    pub fn new(text: &str, vocab: &Vocabulary, goal: Option<Goal>) -> Result<Command> {
        let tokens = vocab.tokenize(text)?;
        if tokens.len() > MAX_COMMAND_TOKENS {
            return Err(Error::usage(format!(
                "command {text:?} has {} tokens, limit is {MAX_COMMAND_TOKENS}",
                tokens.len()
            )));
        }
        Ok(Command {
            text: text.to_string(),
            tokens,
            goal,
        })
    }

    pub fn canonical(goal: Goal, vocab: &Vocabulary) -> Result<Command> {
        Self::new(goal.canonical(), vocab, Some(goal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_round_trips() {
        for g in Goal::ALL {
            assert_eq!(Goal::from_index(g.index()), Some(g));
            assert_eq!(Goal::from_name(g.name()), Some(g));
        }
        assert_eq!(Goal::from_index(5), None);
    }

    #[test]
    fn long_command_rejected() {
        let v = Vocabulary::from_corpus(&["a"]).unwrap();
        let text = vec!["a"; 17].join(" ");
        assert!(matches!(
            Command::new(&text, &v, None),
            Err(Error::Usage(_))
        ));
        assert!(Command::new(&vec!["a"; 16].join(" "), &v, None).is_ok());
    }
}
