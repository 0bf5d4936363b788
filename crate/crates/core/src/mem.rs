//! Mutual-embedding model: a state encoder and a command encoder trained so that
//! congruent pairs land close together and incongruent pairs about one unit apart.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_sampled, Adam, Container, Graph, ParamStore, Tensor, Var};
use crate::dataset::{LabeledPair, PairKind};
use crate::error::{Error, Result};
use crate::lang::{paraphrases, CommandEncoder, Goal, Vocabulary, COMMAND_DIM};
use crate::state_enc::{StateBatch, StateEncoder, StateStack, STATE_DIM};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_LAMBDA: f64 = 2.5e-3;
/// Pairs per forward pass when only distances are needed.
const EVAL_CHUNK: usize = 256;

/// `true` when a distance counts as congruent: strictly below the threshold.
pub fn classify(distance: f64, threshold: f64) -> bool {
    distance < threshold
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct Mem {
    pub store: ParamStore,
    pub state: StateEncoder,
    pub command: CommandEncoder,
    pub vocab: Vocabulary,
}

impl Mem {
    /// Fresh model whose word embeddings start from `words` (`[vocab x dim]`).
    pub fn new(vocab: Vocabulary, words: Tensor, grid_size: usize, seed: u64) -> Result<Mem> {
        if words.shape().len() != 2 || words.shape()[0] != vocab.len() {
            return Err(Error::Dimension {
                op: "word table",
                lhs: words.shape().to_vec(),
                rhs: vec![vocab.len()],
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let state = StateEncoder::new(&mut store, "state", grid_size, &mut rng)?;
        let command = CommandEncoder::new(&mut store, "command", words, COMMAND_DIM, &mut rng)?;
        debug_assert_eq!(STATE_DIM, COMMAND_DIM);
        Ok(Mem {
            store,
            state,
            command,
            vocab,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.state.grid_size
    }

    /// Per-pair distances `||X_s - X_c||` as a `[B]` graph node.
    pub fn distance_graph(
        &self,
        g: &mut Graph,
        states: &StateBatch,
        commands: &[&[usize]],
    ) -> Result<Var> {
        if states.len() != commands.len() {
            return Err(Error::Dimension {
                op: "mem pairs",
                lhs: vec![states.len()],
                rhs: vec![commands.len()],
            });
        }
        let xs = self.state.forward(g, states)?;
        let xc = self.command.encode(g, commands)?;
        let diff = g.sub(xs, xc)?;
        Ok(g.row_norm(diff))
    }

    /// Mean squared residual between distance and label plus `lambda` times the
    /// squared norm of every parameter.
    pub fn loss_graph(&self, g: &mut Graph, batch: &[&LabeledPair], lambda: f64) -> Result<Var> {
        Ok(self.loss_and_distances(g, batch, lambda)?.0)
    }

    /// The loss node together with the `[B]` distance node it was built from.
    pub fn loss_and_distances(
        &self,
        g: &mut Graph,
        batch: &[&LabeledPair],
        lambda: f64,
    ) -> Result<(Var, Var)> {
        if batch.is_empty() {
            return Err(Error::usage("empty MEM batch"));
        }
        let stacks: Vec<&StateStack> = batch.iter().map(|p| &p.stack).collect();
        let cmds: Vec<&[usize]> = batch.iter().map(|p| p.command.tokens.as_slice()).collect();
        let states = StateBatch::from_stacks(&stacks)?;
        let d = self.distance_graph(g, &states, &cmds)?;
        let y = g.input(Tensor::from_vec(batch.iter().map(|p| p.y as f64).collect()));
        let r = g.sub(d, y)?;
        let sq = g.square(r);
        let data = g.mean(sq);
        if lambda == 0.0 {
            return Ok((data, d));
        }
        let mut reg: Option<Var> = None;
        for id in self.store.ids() {
            let p = g.param(id);
            let s = g.square(p);
            let s = g.sum(s);
            reg = Some(match reg {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
        let loss = match reg {
            Some(reg) => {
                let reg = g.scale(reg, lambda);
                g.add(data, reg)?
            }
            None => data,
        };
        Ok((loss, d))
    }

    pub fn loss(&self, batch: &[&LabeledPair], lambda: f64) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let l = self.loss_graph(&mut g, batch, lambda)?;
        Ok(g.scalar(l))
    }

    pub fn distances(&self, pairs: &[&LabeledPair]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(EVAL_CHUNK) {
            let stacks: Vec<&StateStack> = chunk.iter().map(|p| &p.stack).collect();
            let cmds: Vec<&[usize]> = chunk.iter().map(|p| p.command.tokens.as_slice()).collect();
            let mut g = Graph::new(&self.store);
            let d = self.distance_graph(&mut g, &StateBatch::from_stacks(&stacks)?, &cmds)?;
            out.extend_from_slice(g.data(d));
        }
        Ok(out)
    }

    pub fn distance(&self, stack: &StateStack, command: &[usize]) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let d = self.distance_graph(&mut g, &StateBatch::from_stacks(&[stack])?, &[command])?;
        Ok(g.data(d)[0])
    }

    /// State embeddings, one row per stack.
    pub fn embed_states(&self, stacks: &[&StateStack]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(stacks.len());
        for chunk in stacks.chunks(EVAL_CHUNK) {
            let mut g = Graph::new(&self.store);
            let x = self.state.encode(&mut g, chunk)?;
            out.extend(g.data(x).chunks(STATE_DIM).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn embed_commands(&self, commands: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.store);
        let x = self.command.encode(&mut g, commands)?;
        Ok(g.data(x).chunks(COMMAND_DIM).map(<[f64]>::to_vec).collect())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push_bytes(
            "meta",
            format!("grid_size={}\n", self.grid_size()).into_bytes(),
        );
        c.push_bytes("vocab", self.vocab.to_bytes());
        c.push_store("", &self.store);
        c
    }

    pub fn from_container(c: &Container) -> Result<Mem> {
        let meta = std::str::from_utf8(c.bytes("meta")?)
            .map_err(|_| Error::format("MEM meta is not UTF-8"))?;
        let grid_size = meta
            .lines()
            .find_map(|l| l.strip_prefix("grid_size="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("MEM meta lacks grid_size"))?;
        let vocab = Vocabulary::from_bytes(c.bytes("vocab")?)?;
        let words = c.tensor("command.words.table")?.clone();
        let mut mem = Mem::new(vocab, words, grid_size, 0)?;
        c.load_store("", &mut mem.store)?;
        Ok(mem)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Mem> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Sampled central-difference check of the full loss gradient over `batch`,
/// probing `per_param` elements of every parameter tensor.
pub fn loss_grad_check(
    mem: &mut Mem,
    batch: &[&LabeledPair],
    lambda: f64,
    per_param: usize,
    seed: u64,
) -> Result<f64> {
    let (state, command, vocab) = (mem.state, mem.command, mem.vocab.clone());
    grad_check_sampled(&mut mem.store, 1e-6, per_param, seed, |g| {
        let view = Mem {
            store: g.store().clone(),
            state,
            command,
            vocab: vocab.clone(),
        };
        view.loss_graph(g, batch, lambda)
    })
}

/// Fraction of pairs whose thresholded distance agrees with the label.
pub fn accuracy(distances: &[f64], labels: &[u8], threshold: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let hits = distances
        .iter()
        .zip(labels)
        .filter(|(&d, &y)| classify(d, threshold) == (y == 0))
        .count();
    hits as f64 / distances.len() as f64
}

pub fn evaluate(mem: &Mem, pairs: &[LabeledPair], threshold: f64) -> Result<f64> {
    let refs: Vec<&LabeledPair> = pairs.iter().collect();
    let d = mem.distances(&refs)?;
    let y: Vec<u8> = pairs.iter().map(|p| p.y).collect();
    Ok(accuracy(&d, &y, threshold))
}

/// Congruence of unseen wordings: for every matched pair, each held-out
/// paraphrase of its goal is scored against the pair's state. Returns `(hits, trials)`.
pub fn heldout_congruence(
    mem: &Mem,
    pairs: &[LabeledPair],
    threshold: f64,
) -> Result<(usize, usize)> {
    let held: Vec<(Goal, Vec<usize>)> = paraphrases()
        .into_iter()
        .filter(|p| p.held_out)
        .map(|p| Ok((p.goal, mem.vocab.tokenize(&p.text)?)))
        .collect::<Result<_>>()?;
    let tokens: Vec<&[usize]> = held.iter().map(|(_, t)| t.as_slice()).collect();
    let commands = mem.embed_commands(&tokens)?;
    let matched: Vec<&LabeledPair> = pairs
        .iter()
        .filter(|p| p.kind == PairKind::Matched)
        .collect();
    let stacks: Vec<&StateStack> = matched.iter().map(|p| &p.stack).collect();
    let states = mem.embed_states(&stacks)?;
    let (mut hits, mut trials) = (0, 0);
    for (pair, s) in matched.iter().zip(&states) {
        for ((goal, _), c) in held.iter().zip(&commands) {
            if pair.detected == Some(*goal) {
                trials += 1;
                hits += usize::from(classify(euclidean(s, c), threshold));
            }
        }
    }
    Ok((hits, trials))
}

/// Threshold maximizing accuracy, chosen among midpoints of sorted distances.
pub fn optimal_threshold(distances: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut sorted: Vec<f64> = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (
        DEFAULT_THRESHOLD,
        accuracy(distances, labels, DEFAULT_THRESHOLD),
    );
    let candidates = sorted
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .chain(sorted.first().map(|d| d * 0.5))
        .chain(sorted.last().map(|d| d + 1.0));
    for t in candidates {
        let acc = accuracy(distances, labels, t);
        if acc > best.1 {
            best = (t, acc);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Return the parameters of the epoch with the lowest validation loss.
    pub early_stop: bool,
    pub freeze_words: bool,
}

impl Default for MemTrainConfig {
    fn default() -> Self {
        MemTrainConfig {
            lr: 5e-4,
            batch: 32,
            epochs: 20,
            lambda: DEFAULT_LAMBDA,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            early_stop: true,
            freeze_words: false,
        }
    }
}

impl MemTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.lambda.is_nan() {
            return Err(Error::config("lambda must be non-negative"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0, 1)"));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::config("batch and epochs must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Accuracy of minibatch distances computed before each update.
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curves: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.curves {
            let _ = writeln!(
                out,
                "{},{:.9},{:.9},{:.6},{:.6}",
                e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc
            );
        }
        out
    }
}

/// Validation loss (including the penalty) and accuracy.
fn validate_split(mem: &Mem, val: &[LabeledPair], config: &MemTrainConfig) -> Result<(f64, f64)> {
    let refs: Vec<&LabeledPair> = val.iter().collect();
    let d = mem.distances(&refs)?;
    let data: f64 = d
        .iter()
        .zip(val)
        .map(|(d, p)| (d - p.y as f64).powi(2))
        .sum::<f64>()
        / d.len() as f64;
    let y: Vec<u8> = val.iter().map(|p| p.y).collect();
    Ok((
        data + config.lambda * mem.store.l2_squared(),
        accuracy(&d, &y, config.threshold),
    ))
}

/// Minibatch Adam over shuffled epochs; `progress` sees each epoch's statistics.
pub fn train_mem(
    mem: &mut Mem,
    train: &[LabeledPair],
    val: &[LabeledPair],
    config: &MemTrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::config(
            "MEM training needs non-empty train and validation splits",
        ));
    }
    let mut adam = Adam::new(config.lr);
    if config.freeze_words {
        adam.freeze(mem.command.embedding.table);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&LabeledPair> = chunk.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new(&mem.store);
            let (loss, d) = mem.loss_and_distances(&mut g, &batch, config.lambda)?;
            loss_sum += g.scalar(loss) * batch.len() as f64;
            hits += g
                .data(d)
                .iter()
                .zip(&batch)
                .filter(|(&d, p)| classify(d, config.threshold) == (p.y == 0))
                .count();
            let grads = g.backward(loss)?;
            drop(g);
            grads.accumulate_into(&mut mem.store);
            adam.step(&mut mem.store);
        }
        let (val_loss, val_acc) = validate_split(mem, val, config)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            train_acc: hits as f64 / train.len() as f64,
            val_acc,
        };
        progress(&stats);
        curves.push(stats);
        if config.early_stop && best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, mem.store.clone()));
        }
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            mem.store.copy_values_from(&store)?;
            epoch
        }
        None => config.epochs,
    };
    Ok(TrainReport { curves, best_epoch })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::dataset::{build_dataset, DatasetConfig, PairKind};
    use crate::env::EnvConfig;
    use crate::lang::corpus_vocabulary;

    fn env8() -> EnvConfig {
        EnvConfig {
            grid_size: 8,
            episode_length: 150,
            build_radius: 1,
            ..EnvConfig::default()
        }
    }

    fn model(seed: u64) -> Mem {
        let vocab = corpus_vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        let words = Tensor::fan_in_uniform(&[vocab.len(), 128], 128, &mut rng);
        Mem::new(vocab, words, 8, seed).unwrap()
    }

    fn pairs(seed: u64) -> Vec<LabeledPair> {
        let cfg = DatasetConfig {
            env: env8(),
            quota: 12,
            max_episodes: 2000,
            seed,
        };
        build_dataset(&cfg, &corpus_vocabulary()).unwrap().train
    }

    /// Zero every parameter, then give the state branch a constant output `v`.
    /// The command branch then emits exactly zero, so every distance is `|v|`.
    fn constant_distance(mem: &mut Mem, v: f64) {
        for id in mem.store.ids().collect::<Vec<_>>() {
            mem.store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
        mem.store.get_mut(mem.state.fusion.b).data_mut()[0] = v;
    }

    #[test]
    fn classify_boundary() {
        assert!(classify(0.49, 0.5));
        assert!(!classify(0.5, 0.5));
        assert!(!classify(2.0, 0.5));
    }

    proptest! {
        #[test]
        fn classify_is_monotone(a in 0.0f64..3.0, b in 0.0f64..3.0, t in 0.01f64..0.99) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if classify(hi, t) {
                prop_assert!(classify(lo, t));
            }
        }
    }

    #[test]
    fn euclidean_antipodal_units() {
        let mut a = vec![0.0; 256];
        let mut b = vec![0.0; 256];
        a[0] = 1.0;
        b[0] = -1.0;
        assert_eq!(euclidean(&a, &b), 2.0);
    }

    #[test]
    fn loss_identities_are_exact() {
        let data = pairs(1);
        let congruent = data.iter().find(|p| p.y == 0).unwrap();
        let incongruent = data.iter().find(|p| p.y == 1).unwrap();
        let mut mem = model(0);
        constant_distance(&mut mem, 0.0);
        assert_eq!(
            mem.distance(&congruent.stack, &congruent.command.tokens)
                .unwrap(),
            0.0
        );
        assert_eq!(mem.loss(&[congruent], 0.0).unwrap(), 0.0);
        constant_distance(&mut mem, 1.0);
        assert_eq!(mem.loss(&[incongruent], 0.0).unwrap(), 0.0);
        constant_distance(&mut mem, 0.5);
        assert!((mem.loss(&[congruent], 0.0).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn penalty_decomposes() {
        let data = pairs(2);
        let batch: Vec<&LabeledPair> = data.iter().take(5).collect();
        let mem = model(3);
        let lambda = DEFAULT_LAMBDA;
        let full = mem.loss(&batch, lambda).unwrap();
        let bare = mem.loss(&batch, 0.0).unwrap();
        assert!((full - (bare + lambda * mem.store.l2_squared())).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_is_usage_error() {
        assert!(matches!(model(0).loss(&[], 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let data = pairs(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..3 {
            let mut mem = model(seed);
            let i = rng.gen_range(0..data.len() - 1);
            let err = loss_grad_check(&mut mem, &[&data[i], &data[i + 1]], DEFAULT_LAMBDA, 4, seed)
                .unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let data = pairs(5);
        let depot = data
            .iter()
            .find(|p| p.kind == PairKind::Matched && p.detected == Some(crate::lang::Goal::Depot))
            .unwrap();
        let marine = data
            .iter()
            .find(|p| p.kind == PairKind::Matched && p.detected == Some(crate::lang::Goal::Marine))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut toy = Vec::new();
        for i in 0..20 {
            let (state_src, cmd_src) = match i % 4 {
                0 => (depot, depot),
                1 => (marine, marine),
                2 => (depot, marine),
                _ => (marine, depot),
            };
            let mut p = state_src.clone();
            for v in p.stack.cur.nonspatial.iter_mut() {
                *v += rng.gen_range(-0.01..0.01);
            }
            p.command = cmd_src.command.clone();
            p.y = u8::from(i % 4 >= 2);
            toy.push(p);
        }
        let mut mem = model(6);
        let cfg = MemTrainConfig {
            batch: 4,
            ..MemTrainConfig::default()
        };
        train_mem(&mut mem, &toy, &toy, &cfg, |_| {}).unwrap();
        assert_eq!(evaluate(&mem, &toy, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn random_params_near_chance() {
        let data = pairs(7);
        let balanced: Vec<LabeledPair> = data
            .into_iter()
            .filter(|p| p.kind != PairKind::Null)
            .collect();
        for seed in 0..10 {
            let acc = evaluate(&model(seed), &balanced, 0.5).unwrap();
            assert!((0.3..=0.7).contains(&acc), "seed {seed}: {acc}");
        }
    }

    #[test]
    fn accuracy_and_flipped_labels() {
        let d = [0.1, 0.2, 0.3];
        assert_eq!(accuracy(&d, &[0, 0, 0], 0.5), 1.0);
        assert_eq!(accuracy(&d, &[1, 1, 1], 0.5), 0.0);
        let (t, acc) = optimal_threshold(&[0.1, 0.9, 0.2, 1.1], &[0, 1, 0, 1]);
        assert_eq!(acc, 1.0);
        assert!(t > 0.2 && t < 0.9);
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_round_trip() {
        let data = pairs(8);
        let cfg = MemTrainConfig {
            epochs: 2,
            ..MemTrainConfig::default()
        };
        let run = || {
            let mut mem = model(9);
            let r = train_mem(&mut mem, &data[..60], &data[60..], &cfg, |_| {}).unwrap();
            (mem, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert!(m1.store == m2.store);
        let bytes = m1.to_container().to_bytes();
        let back = Mem::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert!(back.to_container().to_bytes() == bytes);
    }

    #[test]
    fn congruent_only_training_shrinks_distances() {
        let data: Vec<LabeledPair> = pairs(10).into_iter().filter(|p| p.y == 0).collect();
        let mut mem = model(11);
        let cfg = MemTrainConfig {
            epochs: 1,
            lambda: 0.0,
            early_stop: false,
            ..MemTrainConfig::default()
        };
        let mean = |mem: &Mem| {
            let refs: Vec<&LabeledPair> = data.iter().collect();
            let d = mem.distances(&refs).unwrap();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let mut last = mean(&mem);
        for epoch in 0..5 {
            let c = MemTrainConfig {
                seed: epoch,
                ..cfg.clone()
            };
            train_mem(&mut mem, &data, &data, &c, |_| {}).unwrap();
            let now = mean(&mem);
            assert!(now <= last + 1e-3, "epoch {epoch}: {last} -> {now}");
            last = now;
        }
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            MemTrainConfig {
                lambda: -1.0,
                ..Default::default()
            },
            MemTrainConfig {
                threshold: 1.0,
                ..Default::default()
            },
            MemTrainConfig {
                batch: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        let mut mem = model(0);
        let r = train_mem(&mut mem, &[], &[], &MemTrainConfig::default(), |_| {});
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
