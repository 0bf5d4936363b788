use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const WORD_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Word2VecConfig {
            dim: WORD_DIM,
            window: 3,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_lr: 1e-4,
            seed: 0,
        }
    }
}

impl Word2VecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 {
            return Err(Error::config(
                "word2vec dim, window and negatives must be positive",
            ));
        }
        if !(self.lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return Err(Error::config(
                "word2vec learning rates must satisfy 0 <= min_lr <= lr, lr > 0",
            ));
        }
        Ok(())
    }
}

/// Skip-gram with negative sampling over token-id sentences.
#[derive(Debug, Clone)]
pub struct Word2Vec {
    config: Word2VecConfig,
    vocab: usize,
    input: Vec<f64>,
    output: Vec<f64>,
    noise: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    total_words: usize,
    processed: usize,
    planned: usize,
}

impl Word2Vec {
    /// Prepare training over `corpus`; the learning rate decays linearly across `config.epochs` passes.
    pub fn new(config: Word2VecConfig, vocab: usize, corpus: &[Vec<usize>]) -> Result<Word2Vec> {
        config.validate()?;
        let mut counts = vec![0usize; vocab];
        for s in corpus {
            for &t in s {
                if t >= vocab {
                    return Err(Error::config(format!(
                        "token id {t} outside vocabulary of {vocab}"
                    )));
                }
                counts[t] += 1;
            }
        }
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::config(
                "word2vec corpus needs at least two distinct tokens",
            ));
        }
        if !corpus.iter().any(|s| s.len() >= 2) {
            return Err(Error::config(
                "word2vec corpus has no sentence with two tokens",
            ));
        }
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let noise = WeightedIndex::new(&weights).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let half = 0.5 / config.dim as f64;
        let input = (0..vocab * config.dim)
            .map(|_| rng.gen_range(-half..half))
            .collect();
        let total_words = counts.iter().sum();
        Ok(Word2Vec {
            output: vec![0.0; vocab * config.dim],
            planned: total_words * config.epochs.max(1),
            config,
            vocab,
            input,
            noise,
            rng,
            total_words,
            processed: 0,
        })
    }

    pub fn epoch(&mut self, corpus: &[Vec<usize>]) {
        let dim = self.config.dim;
        let mut grad = vec![0.0; dim];
        for sentence in corpus {
            for (pos, &center) in sentence.iter().enumerate() {
                let progress = self.processed as f64 / self.planned as f64;
                let lr = (self.config.lr * (1.0 - progress)).max(self.config.min_lr);
                self.processed += 1;
                let reach = self.config.window - self.rng.gen_range(0..self.config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                for (cpos, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|v| *v = 0.0);
                    let row = context * dim;
                    for n in 0..=self.config.negatives {
                        let (target, label) = if n == 0 {
                            (center, 1.0)
                        } else {
                            let t = self.noise.sample(&mut self.rng);
                            if t == center {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = target * dim;
                        let dot: f64 = (0..dim)
                            .map(|i| self.input[row + i] * self.output[out + i])
                            .sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for i in 0..dim {
                            grad[i] += g * self.output[out + i];
                            self.output[out + i] += g * self.input[row + i];
                        }
                    }
                    for i in 0..dim {
                        self.input[row + i] += grad[i];
                    }
                }
            }
        }
    }

    /// Input vectors as a `[vocab x dim]` table.
    pub fn table(&self) -> Tensor {
        Tensor::new(&[self.vocab, self.config.dim], self.input.clone()).expect("table shape")
    }

    pub fn corpus_words(&self) -> usize {
        self.total_words
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn train_word2vec(
    config: &Word2VecConfig,
    vocab: usize,
    corpus: &[Vec<usize>],
) -> Result<Tensor> {
    let mut w2v = Word2Vec::new(config.clone(), vocab, corpus)?;
    for _ in 0..config.epochs {
        w2v.epoch(corpus);
    }
    Ok(w2v.table())
}

/// Cosine similarity between rows `a` and `b` of a `[vocab x dim]` table.
pub fn cosine(table: &Tensor, a: usize, b: usize) -> f64 {
    let dim = table.shape()[1];
    let ra = &table.data()[a * dim..(a + 1) * dim];
    let rb = &table.data()[b * dim..(b + 1) * dim];
    let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    let na: f64 = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{paraphrase_corpus, Vocabulary};

    fn encode(vocab: &Vocabulary, corpus: &[String]) -> Vec<Vec<usize>> {
        corpus.iter().map(|s| vocab.tokenize(s).unwrap()).collect()
    }

    #[test]
    fn synonyms_closer_than_objects() {
        let corpus = paraphrase_corpus(10, 1);
        let vocab = Vocabulary::from_corpus(&corpus).unwrap();
        let ids = encode(&vocab, &corpus);
        let cfg = Word2VecConfig {
            seed: 1,
            ..Default::default()
        };
        let t = train_word2vec(&cfg, vocab.len(), &ids).unwrap();
        let (b, c, m) = (vocab.id("build"), vocab.id("construct"), vocab.id("marine"));
        assert!(cosine(&t, b, c) > cosine(&t, b, m));
    }

    #[test]
    fn alternating_pair_grows_closer() {
        // With only two tokens each is the other's sole negative, so background
        // sentences supply the noise distribution.
        let mut corpus = vec![[2, 3].repeat(20); 5];
        corpus.extend((0..5).map(|k| (0..20).map(|i| 4 + (i * 3 + k) % 6).collect::<Vec<usize>>()));
        let cfg = Word2VecConfig {
            window: 2,
            dim: 16,
            epochs: 10,
            ..Default::default()
        };
        let mut w = Word2Vec::new(cfg, 10, &corpus).unwrap();
        let before = cosine(&w.table(), 2, 3);
        for _ in 0..10 {
            w.epoch(&corpus);
        }
        assert!(cosine(&w.table(), 2, 3) > before);
    }

    #[test]
    fn seeded_runs_identical() {
        let corpus = vec![vec![2, 3, 4, 2, 3]; 4];
        let cfg = Word2VecConfig {
            dim: 8,
            ..Default::default()
        };
        let a = train_word2vec(&cfg, 5, &corpus).unwrap();
        let b = train_word2vec(&cfg, 5, &corpus).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_corpus_rejected() {
        let cfg = Word2VecConfig::default();
        assert!(matches!(
            train_word2vec(&cfg, 4, &[vec![2, 2, 2]]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_word2vec(&cfg, 4, &[vec![2], vec![3]]),
            Err(Error::Config(_))
        ));
    }
}
