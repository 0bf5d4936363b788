use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use narrate::autodiff::{Graph, ParamStore, Tensor};
use narrate::dataset::{build_dataset, DatasetConfig, LabeledPair};
use narrate::env::{CompoundAction, EnvConfig, MiniBuild};
use narrate::lang::{corpus_vocabulary, Word2VecConfig, WORD_DIM};
use narrate::mem::Mem;
use narrate::rl::Policy;
use narrate::state_enc::StateStack;
use narrate::tsne::{tsne, TsneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn autodiff(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_tensor(&[64, 256], &mut rng);
    let b = random_tensor(&[256, 256], &mut rng);
    let store = ParamStore::new();
    c.bench_function("matmul_64x256x256_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store);
            let x = g.input(a.clone());
            let w = g.input(b.clone());
            let y = g.matmul(x, w).unwrap();
            let s = g.sum(y);
            black_box(g.backward(s).unwrap());
        })
    });
    let img = random_tensor(&[8, 18, 16, 16], &mut rng);
    let k = random_tensor(&[16, 18, 5, 5], &mut rng);
    let bias = random_tensor(&[16], &mut rng);
    c.bench_function("conv5x5_s2_batch8_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store);
            let x = g.input(img.clone());
            let w = g.input(k.clone());
            let bb = g.input(bias.clone());
            let y = g.conv2d(x, w, bb, 2, 2).unwrap();
            let s = g.sum(y);
            black_box(g.backward(s).unwrap());
        })
    });
}

fn env(c: &mut Criterion) {
    let cfg = EnvConfig::desk();
    c.bench_function("env_episode_noop_desk", |bench| {
        bench.iter(|| {
            let mut env = MiniBuild::new(&cfg, 1).unwrap();
            while !env.advance(CompoundAction::no_op()).unwrap().1 {}
            black_box(env.snapshot());
        })
    });
}

fn models(c: &mut Criterion) {
    let cfg = EnvConfig::desk();
    let vocab = corpus_vocabulary();
    let data = build_dataset(
        &DatasetConfig {
            env: cfg.clone(),
            quota: 20,
            max_episodes: 5000,
            seed: 0,
        },
        &vocab,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let words = random_tensor(
        &[vocab.len(), Word2VecConfig::default().dim.min(WORD_DIM)],
        &mut rng,
    );
    let mem = Mem::new(vocab, words, cfg.grid_size, 0).unwrap();
    let batch: Vec<&LabeledPair> = data.train.iter().take(32).collect();
    c.bench_function("mem_loss_fwd_bwd_batch32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&mem.store);
            let l = mem.loss_graph(&mut g, &batch, 2.5e-3).unwrap();
            black_box(g.backward(l).unwrap());
        })
    });
    let policy = Policy::new(cfg.grid_size, 0).unwrap();
    let stacks: Vec<StateStack> = data.train.iter().take(8).map(|p| p.stack.clone()).collect();
    let refs: Vec<&StateStack> = stacks.iter().collect();
    c.bench_function("policy_act_batch8", |bench| {
        bench.iter(|| black_box(policy.act(&refs, &mut rng).unwrap()))
    });
}

fn projection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let cfg = TsneConfig {
        iterations: 250,
        ..TsneConfig::default()
    };
    let mut group = c.benchmark_group("tsne");
    group.sample_size(10);
    group.bench_function("exact_200pts_250iters", |bench| {
        bench.iter(|| black_box(tsne(&points, &cfg).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, autodiff, env, models, projection);
criterion_main!(benches);
