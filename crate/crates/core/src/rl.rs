//! Advantage actor-critic over MiniBuild with pluggable reward shaping.
//!
//! Synchronous mode steps every worker in lockstep and applies one update per
//! round from the pooled segments, so a seed fixes the whole run. Asynchronous
//! mode runs one thread per worker against shared parameters without locking
//! (Hogwild); its results vary from run to run.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Container, Dense, Graph, ParamId, ParamStore, Tensor, Var};
use crate::env::{ActionId, CompoundAction, EnvConfig, MiniBuild, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::mem::Mem;
use crate::shaping::{shape_batch, Distance, MemDistance, NarrationScript, RewardMode};
use crate::state_enc::{StateBatch, StateEncoder, StateStack, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateMode {
    Sync,
    Async,
}

impl UpdateMode {
    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::Sync => "sync",
            UpdateMode::Async => "async",
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(UpdateMode::Sync),
            "async" => Ok(UpdateMode::Async),
            _ => Err(Error::config(format!("unknown update mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlConfig {
    pub env: EnvConfig,
    pub workers: usize,
    pub n_step: usize,
    pub gamma: f64,
    pub entropy: f64,
    pub value_coef: f64,
    pub lr: f64,
    /// Total environment steps across all workers.
    pub budget: u64,
    pub mode: RewardMode,
    pub update: UpdateMode,
    pub seed: u64,
    /// Start from the MEM state branch and keep it frozen.
    pub share_mem_encoder: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            env: EnvConfig::default(),
            workers: 8,
            n_step: 16,
            gamma: 0.99,
            entropy: 0.01,
            value_coef: 0.5,
            lr: 1e-4,
            budget: 200_000,
            mode: RewardMode::Baseline,
            update: UpdateMode::Sync,
            seed: 0,
            share_mem_encoder: false,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.workers == 0 || self.n_step == 0 {
            return Err(Error::config("workers and n_step must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma must lie in (0, 1]"));
        }
        if self.budget != 0 && self.budget < self.n_step as u64 {
            return Err(Error::config("step budget must be zero or at least n_step"));
        }
        if !(self.lr > 0.0) || self.entropy < 0.0 || self.value_coef < 0.0 {
            return Err(Error::config(
                "lr must be positive; entropy and value coefficients non-negative",
            ));
        }
        Ok(())
    }
}

/// Shared encoder with action-id, per-axis placement and value heads.
#[derive(Debug, Clone)]
pub struct Policy {
    pub store: ParamStore,
    pub encoder: StateEncoder,
    pub action_head: Dense,
    pub x_head: Dense,
    pub y_head: Dense,
    pub value_head: Dense,
}

/// Head outputs for a batch: logits `[B x 5]`, `[B x G]`, `[B x G]` and values `[B]`.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub action: Var,
    pub x: Var,
    pub y: Var,
    pub value: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: CompoundAction,
    pub logprob: f64,
    pub value: f64,
}

impl Policy {
    pub fn new(grid_size: usize, seed: u64) -> Result<Policy> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = StateEncoder::new(&mut store, "state", grid_size, &mut rng)?;
        let action_head = Dense::new(
            &mut store,
            "policy.action",
            STATE_DIM,
            NUM_ACTIONS,
            &mut rng,
        )?;
        let x_head = Dense::new(&mut store, "policy.x", STATE_DIM, grid_size, &mut rng)?;
        let y_head = Dense::new(&mut store, "policy.y", STATE_DIM, grid_size, &mut rng)?;
        let value_head = Dense::new(&mut store, "policy.value", STATE_DIM, 1, &mut rng)?;
        Ok(Policy {
            store,
            encoder,
            action_head,
            x_head,
            y_head,
            value_head,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.encoder.grid_size
    }

    /// Parameters belonging to the state encoder.
    pub fn encoder_ids(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("state."))
            .collect()
    }

    /// Copy the MEM's state branch into this policy's encoder.
    pub fn adopt_encoder(&mut self, mem: &Mem) -> Result<()> {
        if mem.grid_size() != self.grid_size() {
            return Err(Error::config(format!(
                "MEM grid {} differs from environment grid {}",
                mem.grid_size(),
                self.grid_size()
            )));
        }
        for id in self.encoder_ids() {
            let src = mem
                .store
                .id(self.store.name(id))
                .ok_or_else(|| Error::format(format!("MEM lacks {}", self.store.name(id))))?;
            let data = mem.store.get(src).data().to_vec();
            self.store.get_mut(id).data_mut().copy_from_slice(&data);
        }
        Ok(())
    }

    pub fn heads(&self, g: &mut Graph, batch: &StateBatch) -> Result<Heads> {
        let e = self.encoder.forward(g, batch)?;
        let h = g.relu(e);
        let action = self.action_head.forward(g, h)?;
        let x = self.x_head.forward(g, h)?;
        let y = self.y_head.forward(g, h)?;
        let v = self.value_head.forward(g, h)?;
        let value = g.reshape(v, &[batch.len()])?;
        Ok(Heads {
            action,
            x,
            y,
            value,
        })
    }

    /// Sample one compound action per stack from the masked policy.
    pub fn act(&self, stacks: &[&StateStack], rng: &mut impl Rng) -> Result<Vec<Decision>> {
        let mut g = Graph::new(&self.store);
        let heads = self.heads(&mut g, &StateBatch::from_stacks(stacks)?)?;
        let masks: Vec<bool> = stacks.iter().flat_map(|s| s.cur.action_mask.0).collect();
        let la = g.masked_log_softmax(heads.action, &masks)?;
        let n = self.grid_size();
        let open = vec![true; stacks.len() * n];
        let lx = g.masked_log_softmax(heads.x, &open)?;
        let ly = g.masked_log_softmax(heads.y, &open)?;
        let (la, lx, ly, v) = (g.data(la), g.data(lx), g.data(ly), g.data(heads.value));
        let mut out = Vec::with_capacity(stacks.len());
        for (b, s) in stacks.iter().enumerate() {
            let row = &la[b * NUM_ACTIONS..(b + 1) * NUM_ACTIONS];
            let a = sample(row, &s.cur.action_mask.0, rng);
            let id = ActionId::from_index(a).expect("action index");
            let mut logprob = row[a];
            let (mut x, mut y) = (0, 0);
            if id.is_placement() {
                let all = vec![true; n];
                x = sample(&lx[b * n..(b + 1) * n], &all, rng);
                y = sample(&ly[b * n..(b + 1) * n], &all, rng);
                logprob += lx[b * n + x] + ly[b * n + y];
            }
            out.push(Decision {
                action: CompoundAction::new(id, x, y),
                logprob,
                value: v[b],
            });
        }
        Ok(out)
    }

    /// State values only.
    pub fn values(&self, stacks: &[&StateStack]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let heads = self.heads(&mut g, &StateBatch::from_stacks(stacks)?)?;
        Ok(g.data(heads.value).to_vec())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push_bytes(
            "meta",
            format!("grid_size={}\n", self.grid_size()).into_bytes(),
        );
        c.push_store("", &self.store);
        c
    }

    pub fn from_container(c: &Container) -> Result<Policy> {
        let meta = std::str::from_utf8(c.bytes("meta")?)
            .map_err(|_| Error::format("policy meta is not UTF-8"))?;
        let grid = meta
            .lines()
            .find_map(|l| l.strip_prefix("grid_size="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("policy meta lacks grid_size"))?;
        let mut p = Policy::new(grid, 0)?;
        c.load_store("", &mut p.store)?;
        Ok(p)
    }
}

/// Index drawn from `exp(logp)` over the allowed entries.
fn sample(logp: &[f64], allowed: &[bool], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, (&lp, &ok)) in logp.iter().zip(allowed).enumerate() {
        if ok {
            acc += lp.exp();
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Bootstrapped discounted returns for one segment; `bootstrap` is ignored when the last step ends an episode.
pub fn n_step_returns(
    rewards: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::usage("empty trajectory segment"));
    }
    if rewards.len() != dones.len() {
        return Err(Error::Dimension {
            op: "n_step_returns",
            lhs: vec![rewards.len()],
            rhs: vec![dones.len()],
        });
    }
    let mut out = vec![0.0; rewards.len()];
    let mut r = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            r = 0.0;
        }
        r = rewards[t] + gamma * r;
        out[t] = r;
    }
    Ok(out)
}

/// Entropy of each row of a (masked) log-softmax, shape `[rows]`.
pub fn row_entropy(g: &mut Graph, logp: Var) -> Result<Var> {
    let shape = g.shape(logp).to_vec();
    let (rows, cols) = (shape[0], shape[1]);
    let p = g.exp(logp);
    let plogp = g.mul(p, logp)?;
    let ones = g.input(Tensor::new(&[cols, 1], vec![1.0; cols])?);
    let s = g.matmul(plogp, ones)?;
    let s = g.reshape(s, &[rows])?;
    Ok(g.scale(s, -1.0))
}

/// `-mean(logp * A) + value_coef * mean((R - V)^2) - beta * mean(entropy)`, advantages held constant.
#[allow(clippy::too_many_arguments)]
pub fn a2c_loss(
    g: &mut Graph,
    logp: Var,
    entropy: Var,
    values: Var,
    returns: &[f64],
    advantages: &[f64],
    value_coef: f64,
    beta: f64,
) -> Result<Var> {
    let adv = g.input(Tensor::from_vec(advantages.to_vec()));
    let pg = g.mul(logp, adv)?;
    let pg = g.mean(pg);
    let pg = g.scale(pg, -1.0);
    let ret = g.input(Tensor::from_vec(returns.to_vec()));
    let err = g.sub(ret, values)?;
    let sq = g.square(err);
    let vl = g.mean(sq);
    let vl = g.scale(vl, value_coef);
    let ent = g.mean(entropy);
    let ent = g.scale(ent, -beta);
    let l = g.add(pg, vl)?;
    g.add(l, ent)
}

/// One acted step kept for the update.
#[derive(Debug, Clone)]
struct Record {
    stack: StateStack,
    action: CompoundAction,
    value: f64,
    reward: f64,
    done: bool,
}

/// Gradient of the actor-critic loss over `records` with the given returns, accumulated into `policy.store`.
fn accumulate_update(
    policy: &mut Policy,
    records: &[&Record],
    returns: &[f64],
    config: &RlConfig,
) -> Result<()> {
    let stacks: Vec<&StateStack> = records.iter().map(|r| &r.stack).collect();
    let batch = StateBatch::from_stacks(&stacks)?;
    let n = policy.grid_size();
    let grads = {
        let mut g = Graph::new(&policy.store);
        let heads = policy.heads(&mut g, &batch)?;
        let masks: Vec<bool> = stacks.iter().flat_map(|s| s.cur.action_mask.0).collect();
        let la = g.masked_log_softmax(heads.action, &masks)?;
        let open = vec![true; records.len() * n];
        let lx = g.masked_log_softmax(heads.x, &open)?;
        let ly = g.masked_log_softmax(heads.y, &open)?;
        let ids: Vec<usize> = records.iter().map(|r| r.action.id.index()).collect();
        let xs: Vec<usize> = records.iter().map(|r| r.action.x).collect();
        let ys: Vec<usize> = records.iter().map(|r| r.action.y).collect();
        let placement: Vec<f64> = records
            .iter()
            .map(|r| if r.action.id.is_placement() { 1.0 } else { 0.0 })
            .collect();
        let pa = g.pick_cols(la, &ids)?;
        let px = g.pick_cols(lx, &xs)?;
        let py = g.pick_cols(ly, &ys)?;
        let pxy = g.add(px, py)?;
        let gate = g.input(Tensor::from_vec(placement));
        let pxy = g.mul(pxy, gate)?;
        let logp = g.add(pa, pxy)?;
        let ea = row_entropy(&mut g, la)?;
        let ex = row_entropy(&mut g, lx)?;
        let ey = row_entropy(&mut g, ly)?;
        let e = g.add(ea, ex)?;
        let entropy = g.add(e, ey)?;
        let advantages: Vec<f64> = records
            .iter()
            .zip(returns)
            .map(|(r, ret)| ret - r.value)
            .collect();
        let loss = a2c_loss(
            &mut g,
            logp,
            entropy,
            heads.value,
            returns,
            &advantages,
            config.value_coef,
            config.entropy,
        )?;
        g.backward(loss)?
    };
    grads.accumulate_into(&mut policy.store);
    Ok(())
}

/// One finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRow {
    /// Environment steps taken by all workers when the episode ended.
    pub step: u64,
    /// Completion order across workers, from 0.
    pub episode: u64,
    pub worker: usize,
    /// Marines completed; shaping never contributes.
    pub env_return: f64,
    pub shaped_return: f64,
    pub script_advances: u32,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub episodes: Vec<EpisodeRow>,
    pub steps: u64,
    pub updates: u64,
}

impl TrainOutcome {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("step,episode,env_return,shaped_return,script_advances\n");
        for e in &self.episodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.step, e.episode, e.env_return, e.shaped_return, e.script_advances
            );
        }
        out
    }

    /// Index of the first episode that produced a marine.
    pub fn first_marine_episode(&self) -> Option<u64> {
        self.episodes
            .iter()
            .find(|e| e.env_return > 0.0)
            .map(|e| e.episode)
    }

    /// Mean marines per episode over the last `n` finished episodes.
    pub fn final_mean(&self, n: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|e| e.env_return).sum::<f64>() / tail.len() as f64
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x.wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// One environment with its frame stack, script and running episode totals.
struct Worker {
    id: usize,
    env: MiniBuild,
    stack: StateStack,
    episodes: u64,
    env_return: f64,
    shaped_return: f64,
    advances: u32,
}

impl Worker {
    fn new(config: &RlConfig, id: usize) -> Result<Worker> {
        let env = MiniBuild::new(&config.env, mix(config.seed, id as u64, 0))?;
        let stack = StateStack::initial(env.snapshot());
        Ok(Worker {
            id,
            env,
            stack,
            episodes: 0,
            env_return: 0.0,
            shaped_return: 0.0,
            advances: 0,
        })
    }

    fn restart(&mut self, config: &RlConfig) -> Result<()> {
        self.episodes += 1;
        self.env = MiniBuild::new(&config.env, mix(config.seed, self.id as u64, self.episodes))?;
        self.stack = StateStack::initial(self.env.snapshot());
        self.env_return = 0.0;
        self.shaped_return = 0.0;
        self.advances = 0;
        Ok(())
    }
}

fn check_inputs(config: &RlConfig, mem: Option<&Arc<Mem>>) -> Result<()> {
    config.validate()?;
    if config.mode == RewardMode::MemShaped && mem.is_none() {
        return Err(Error::config("mem_shaped mode needs a MEM checkpoint"));
    }
    if config.share_mem_encoder && mem.is_none() {
        return Err(Error::config(
            "sharing the MEM encoder needs a MEM checkpoint",
        ));
    }
    Ok(())
}

fn initial_policy(config: &RlConfig, mem: Option<&Arc<Mem>>) -> Result<(Policy, Adam)> {
    let mut policy = Policy::new(config.env.grid_size, mix(config.seed, u64::MAX, 1))?;
    let mut adam = Adam::new(config.lr);
    if config.share_mem_encoder {
        policy.adopt_encoder(mem.expect("checked"))?;
        for id in policy.encoder_ids() {
            adam.freeze(id);
        }
    }
    Ok((policy, adam))
}

/// Train to the step budget. `progress` sees each finished episode (synchronous mode only).
pub fn train_agent(
    config: &RlConfig,
    script: &NarrationScript,
    mem: Option<Arc<Mem>>,
    progress: impl FnMut(&EpisodeRow),
) -> Result<TrainOutcome> {
    check_inputs(config, mem.as_ref())?;
    match config.update {
        UpdateMode::Sync => train_sync(config, script, mem, progress),
        UpdateMode::Async => train_async(config, script, mem),
    }
}

fn train_sync(
    config: &RlConfig,
    script: &NarrationScript,
    mem: Option<Arc<Mem>>,
    mut progress: impl FnMut(&EpisodeRow),
) -> Result<TrainOutcome> {
    let (mut policy, mut adam) = initial_policy(config, mem.as_ref())?;
    let mut workers = (0..config.workers)
        .map(|w| Worker::new(config, w))
        .collect::<Result<Vec<_>>>()?;
    let mut scripts = vec![script.clone(); config.workers];
    let mut distance = mem.map(MemDistance::new);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, u64::MAX, 2));
    let mut episodes = Vec::new();
    let (mut steps, mut updates) = (0u64, 0u64);
    while steps < config.budget {
        let mut segments: Vec<Vec<Record>> =
            vec![Vec::with_capacity(config.n_step); config.workers];
        for _ in 0..config.n_step {
            if steps >= config.budget {
                break;
            }
            let stacks: Vec<&StateStack> = workers.iter().map(|w| &w.stack).collect();
            let decisions = policy.act(&stacks, &mut rng)?;
            let mut next = Vec::with_capacity(config.workers);
            let mut env_rewards = Vec::with_capacity(config.workers);
            let mut dones = Vec::with_capacity(config.workers);
            for (w, d) in workers.iter_mut().zip(&decisions) {
                let (r, done) = w.env.advance(d.action)?;
                next.push(w.stack.push(w.env.snapshot())?);
                env_rewards.push(r);
                dones.push(done);
            }
            steps += config.workers as u64;
            let refs: Vec<&StateStack> = next.iter().collect();
            let shaped = shape_batch(
                config.mode,
                &refs,
                &env_rewards,
                &mut scripts,
                distance.as_mut().map(|d| d as &mut dyn Distance),
            )?;
            for (i, ((w, d), stack)) in workers.iter_mut().zip(&decisions).zip(next).enumerate() {
                let old = std::mem::replace(&mut w.stack, stack);
                segments[i].push(Record {
                    stack: old,
                    action: d.action,
                    value: d.value,
                    reward: shaped[i].reward,
                    done: dones[i],
                });
                w.env_return += env_rewards[i];
                w.shaped_return += shaped[i].reward;
                w.advances += shaped[i].advanced as u32;
                if dones[i] {
                    let row = EpisodeRow {
                        step: steps,
                        episode: episodes.len() as u64,
                        worker: w.id,
                        env_return: w.env_return,
                        shaped_return: w.shaped_return,
                        script_advances: w.advances,
                    };
                    progress(&row);
                    episodes.push(row);
                    w.restart(config)?;
                    scripts[i].reset();
                }
            }
        }
        let stacks: Vec<&StateStack> = workers.iter().map(|w| &w.stack).collect();
        let bootstrap = policy.values(&stacks)?;
        let mut flat: Vec<&Record> = Vec::new();
        let mut returns = Vec::new();
        for (seg, &v) in segments.iter().zip(&bootstrap) {
            if seg.is_empty() {
                continue;
            }
            let rewards: Vec<f64> = seg.iter().map(|r| r.reward).collect();
            let dones: Vec<bool> = seg.iter().map(|r| r.done).collect();
            returns.extend(n_step_returns(&rewards, &dones, v, config.gamma)?);
            flat.extend(seg.iter());
        }
        if flat.is_empty() {
            break;
        }
        accumulate_update(&mut policy, &flat, &returns, config)?;
        adam.step(&mut policy.store);
        updates += 1;
    }
    Ok(TrainOutcome {
        policy,
        episodes,
        steps,
        updates,
    })
}

/// Parameters as raw `f64` bits, read and written without synchronization.
struct SharedParams {
    values: Vec<Vec<AtomicU64>>,
}

impl SharedParams {
    fn new(store: &ParamStore) -> Self {
        SharedParams {
            values: store
                .ids()
                .map(|id| {
                    store
                        .get(id)
                        .data()
                        .iter()
                        .map(|v| AtomicU64::new(v.to_bits()))
                        .collect()
                })
                .collect(),
        }
    }

    fn read_into(&self, store: &mut ParamStore) {
        for (id, shared) in store
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(&self.values)
        {
            for (dst, src) in store.get_mut(id).data_mut().iter_mut().zip(shared) {
                *dst = f64::from_bits(src.load(Ordering::Relaxed));
            }
        }
    }

    /// Add `after - before` elementwise; concurrent writers may overwrite each other.
    fn apply_delta(&self, before: &ParamStore, after: &ParamStore) {
        for (id, shared) in after.ids().zip(&self.values) {
            for ((a, b), s) in after
                .get(id)
                .data()
                .iter()
                .zip(before.get(id).data())
                .zip(shared)
            {
                let cur = f64::from_bits(s.load(Ordering::Relaxed));
                s.store((cur + (a - b)).to_bits(), Ordering::Relaxed);
            }
        }
    }
}

fn train_async(
    config: &RlConfig,
    script: &NarrationScript,
    mem: Option<Arc<Mem>>,
) -> Result<TrainOutcome> {
    let (policy, adam) = initial_policy(config, mem.as_ref())?;
    let shared = SharedParams::new(&policy.store);
    let steps = AtomicU64::new(0);
    let updates = AtomicU64::new(0);
    let episodes: Mutex<Vec<EpisodeRow>> = Mutex::new(Vec::new());
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.workers)
            .map(|w| {
                let (shared, steps, updates, episodes) = (&shared, &steps, &updates, &episodes);
                let (mut local, mut adam) = (policy.clone(), adam.clone());
                let mut script = script.clone();
                let mut distance = mem.clone().map(MemDistance::new);
                scope.spawn(move || -> Result<()> {
                    let mut worker = Worker::new(config, w)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, w as u64, u64::MAX));
                    while steps.load(Ordering::Relaxed) < config.budget {
                        shared.read_into(&mut local.store);
                        let mut seg = Vec::with_capacity(config.n_step);
                        for _ in 0..config.n_step {
                            if steps.fetch_add(1, Ordering::Relaxed) >= config.budget {
                                break;
                            }
                            let d = local.act(&[&worker.stack], &mut rng)?[0];
                            let (r, done) = worker.env.advance(d.action)?;
                            let next = worker.stack.push(worker.env.snapshot())?;
                            let shaped = shape_batch(
                                config.mode,
                                &[&next],
                                &[r],
                                std::slice::from_mut(&mut script),
                                distance.as_mut().map(|d| d as &mut dyn Distance),
                            )?[0];
                            let old = std::mem::replace(&mut worker.stack, next);
                            seg.push(Record {
                                stack: old,
                                action: d.action,
                                value: d.value,
                                reward: shaped.reward,
                                done,
                            });
                            worker.env_return += r;
                            worker.shaped_return += shaped.reward;
                            worker.advances += shaped.advanced as u32;
                            if done {
                                let mut log = episodes.lock().expect("episode log");
                                let row = EpisodeRow {
                                    step: steps.load(Ordering::Relaxed),
                                    episode: log.len() as u64,
                                    worker: w,
                                    env_return: worker.env_return,
                                    shaped_return: worker.shaped_return,
                                    script_advances: worker.advances,
                                };
                                log.push(row);
                                drop(log);
                                worker.restart(config)?;
                                script.reset();
                            }
                        }
                        if seg.is_empty() {
                            break;
                        }
                        let v = local.values(&[&worker.stack])?[0];
                        let rewards: Vec<f64> = seg.iter().map(|r| r.reward).collect();
                        let dones: Vec<bool> = seg.iter().map(|r| r.done).collect();
                        let returns = n_step_returns(&rewards, &dones, v, config.gamma)?;
                        let refs: Vec<&Record> = seg.iter().collect();
                        accumulate_update(&mut local, &refs, &returns, config)?;
                        let before = local.store.clone();
                        adam.step(&mut local.store);
                        shared.apply_delta(&before, &local.store);
                        updates.fetch_add(1, Ordering::Relaxed);
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::usage("worker thread panicked")))
            })
            .collect()
    });
    for r in results {
        r?;
    }
    let mut policy = policy;
    shared.read_into(&mut policy.store);
    Ok(TrainOutcome {
        policy,
        episodes: episodes.into_inner().expect("episode log"),
        steps: steps.load(Ordering::Relaxed).min(config.budget),
        updates: updates.load(Ordering::Relaxed),
    })
}

/// Greedy-free evaluation: sample from the policy for `episodes` episodes and report marines per episode.
pub fn evaluate_policy(
    policy: &Policy,
    env: &EnvConfig,
    episodes: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes as usize);
    for e in 0..episodes {
        let mut game = MiniBuild::new(env, mix(seed, e as u64, 7))?;
        let mut stack = StateStack::initial(game.snapshot());
        let mut total = 0.0;
        loop {
            let d = policy.act(&[&stack], &mut rng)?[0];
            let (r, done) = game.advance(d.action)?;
            total += r;
            if done {
                break;
            }
            stack = stack.push(game.snapshot())?;
        }
        out.push(total);
    }
    Ok(out)
}
