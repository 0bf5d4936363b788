use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Embedding, Graph, LstmCell, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub const COMMAND_DIM: usize = 256;

/// Word embeddings followed by a single left-to-right LSTM; the final hidden state is the command embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandEncoder {
    pub embedding: Embedding,
    pub lstm: LstmCell,
}

impl CommandEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        table: Tensor,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let embedding = Embedding::new(store, &format!("{name}.words"), table)?;
        let lstm = LstmCell::new(store, &format!("{name}.lstm"), embedding.dim, hidden, rng)?;
        Ok(CommandEncoder { embedding, lstm })
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.hidden
    }

    /// Encode a batch of token sequences into `[N x hidden]`.
    ///
    /// Duplicate sequences are encoded once and sequences of equal length share LSTM steps.
    pub fn encode(&self, g: &mut Graph, commands: &[&[usize]]) -> Result<Var> {
        if commands.is_empty() {
            return Err(Error::usage("empty command batch"));
        }
        let mut unique: BTreeMap<&[usize], usize> = BTreeMap::new();
        for c in commands {
            if c.is_empty() {
                return Err(Error::usage("cannot encode an empty command"));
            }
            if let Some(&t) = c.iter().find(|&&t| t >= self.embedding.vocab) {
                return Err(Error::usage(format!("token id {t} outside vocabulary")));
            }
            let next = unique.len();
            unique.entry(c).or_insert(next);
        }
        let mut by_len: BTreeMap<usize, Vec<&[usize]>> = BTreeMap::new();
        for &c in unique.keys() {
            by_len.entry(c.len()).or_default().push(c);
        }
        let mut row_of: BTreeMap<&[usize], usize> = BTreeMap::new();
        let mut blocks = Vec::with_capacity(by_len.len());
        for (len, group) in &by_len {
            let steps = (0..*len)
                .map(|t| {
                    let ids: Vec<usize> = group.iter().map(|c| c[t]).collect();
                    self.embedding.lookup(g, &ids)
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(self.lstm.run(g, &steps)?);
            for &c in group {
                let r = row_of.len();
                row_of.insert(c, r);
            }
        }
        let stacked = if blocks.len() == 1 {
            blocks[0]
        } else {
            g.concat_rows(&blocks)?
        };
        let idx: Vec<usize> = commands.iter().map(|c| row_of[c]).collect();
        if idx.len() == row_of.len() && idx.iter().enumerate().all(|(i, &r)| i == r) {
            return Ok(stacked);
        }
        g.gather_rows(stacked, &idx)
    }
}
