use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::layers::{Conv2d, Dense, Embedding, LstmCell};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative terms.
const REL_FLOOR: f64 = 1e-6;

/// Central-difference check of every parameter element.
///
/// `build` must construct a scalar-output graph. Returns the maximum relative
/// error `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`; a store
/// with no parameters yields `0.0`.
pub fn grad_check<F>(store: &mut ParamStore, epsilon: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    grad_check_sampled(store, epsilon, usize::MAX, 0, build)
}

/// Like [`grad_check`] but probes at most `per_param` seeded random elements of
/// each parameter tensor.
pub fn grad_check_sampled<F>(
    store: &mut ParamStore,
    epsilon: f64,
    per_param: usize,
    seed: u64,
    build: F,
) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::usage(format!(
            "epsilon {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(store);
        let out = build(&mut g)?;
        if g.value(out).len() != 1 {
            return Err(Error::usage(format!(
                "gradient check needs a scalar output, got shape {:?}",
                g.shape(out)
            )));
        }
        let grads = g.backward(out)?;
        store
            .ids()
            .map(|id| {
                grads
                    .param(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; store.get(id).len()])
            })
            .collect()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let out = build(&mut g)?;
        Ok(g.scalar(out))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_param).into_vec()
        };
        for k in picks {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + epsilon;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - epsilon;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[id.0][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Builds a scalar loss on a fresh graph.
pub type BuildFn = Box<dyn Fn(&mut Graph) -> Result<Var>>;

/// A named scalar graph over its own parameters.
pub struct GradCase {
    pub name: &'static str,
    pub store: ParamStore,
    pub build: BuildFn,
}

impl GradCase {
    /// Maximum relative error over every parameter element.
    pub fn check(&mut self) -> Result<f64> {
        let build = &self.build;
        grad_check(&mut self.store, 1e-6, |g| build(g))
    }
}

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// Random small graphs exercising one primitive each; every input is a parameter
/// so the check covers input gradients too.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<GradCase> = Vec::new();
    let rows = rng.gen_range(1..4);
    let cols = rng.gen_range(2..5);
    // Weighted reduction so the output depends on every element asymmetrically.
    let weights = random_tensor(&[rows, cols], &mut rng);

    macro_rules! unary {
        ($name:expr, $f:expr) => {{
            let mut s = ParamStore::new();
            s.add("a", random_tensor(&[rows, cols], &mut rng))
                .expect("fresh name");
            let w = weights.clone();
            out.push(GradCase {
                name: $name,
                store: s,
                build: Box::new(move |g: &mut Graph| {
                    let a = g.param(ParamId(0));
                    let y = $f(g, a)?;
                    let wv = g.input(w.clone());
                    let p = g.mul(y, wv)?;
                    Ok(g.sum(p))
                }),
            });
        }};
    }
    unary!("relu", |g: &mut Graph, a| Ok::<_, Error>(g.relu(a)));
    unary!("tanh", |g: &mut Graph, a| Ok::<_, Error>(g.tanh(a)));
    unary!("sigmoid", |g: &mut Graph, a| Ok::<_, Error>(g.sigmoid(a)));
    unary!("exp", |g: &mut Graph, a| Ok::<_, Error>(g.exp(a)));
    unary!("square", |g: &mut Graph, a| Ok::<_, Error>(g.square(a)));
    unary!("softmax", |g: &mut Graph, a| Ok::<_, Error>(g.softmax(a)));
    unary!("scale", |g: &mut Graph, a| Ok::<_, Error>(g.scale(a, -1.7)));
    let mask: Vec<bool> = (0..rows * cols)
        .map(|i| i % cols == 0 || rng.gen_bool(0.6))
        .collect();
    unary!("masked_log_softmax", |g: &mut Graph, a| g
        .masked_log_softmax(a, &mask));

    // binary ops
    for name in ["add", "sub", "mul", "mse"] {
        let mut s = ParamStore::new();
        s.add("a", random_tensor(&[rows, cols], &mut rng))
            .expect("fresh name");
        s.add("b", random_tensor(&[rows, cols], &mut rng))
            .expect("fresh name");
        let w = weights.clone();
        out.push(GradCase {
            name,
            store: s,
            build: Box::new(move |g: &mut Graph| {
                let (a, b) = (g.param(ParamId(0)), g.param(ParamId(1)));
                let y = match name {
                    "add" => g.add(a, b)?,
                    "sub" => g.sub(a, b)?,
                    "mul" => g.mul(a, b)?,
                    _ => return g.mse(a, b),
                };
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            }),
        });
    }

    // dense (matmul + bias)
    {
        let mut s = ParamStore::new();
        let inner = rng.gen_range(2..5);
        s.add("x", random_tensor(&[rows, inner], &mut rng))
            .expect("fresh name");
        let d = Dense::new(&mut s, "d", inner, cols, &mut rng).expect("fresh name");
        let w = weights.clone();
        out.push(GradCase {
            name: "dense",
            store: s,
            build: Box::new(move |g: &mut Graph| {
                let x = g.param(ParamId(0));
                let y = d.forward(g, x)?;
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            }),
        });
    }

    // conv2d with random geometry
    {
        let mut s = ParamStore::new();
        let (ci, co) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let k = [1, 3][rng.gen_range(0..2)];
        let stride = rng.gen_range(1..3);
        let size = rng.gen_range(4..7);
        s.add("x", random_tensor(&[2, ci, size, size], &mut rng))
            .expect("fresh name");
        let conv = Conv2d::new(&mut s, "c", ci, co, k, stride, &mut rng).expect("fresh name");
        let o = conv.out_size(size);
        let w = random_tensor(&[2, co, o, o], &mut rng);
        out.push(GradCase {
            name: "conv2d",
            store: s,
            build: Box::new(move |g: &mut Graph| {
                let x = g.param(ParamId(0));
                let y = conv.forward(g, x)?;
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            }),
        });
    }

    // lstm over a short sequence
    {
        let mut s = ParamStore::new();
        let (inp, hid) = (rng.gen_range(2..4), rng.gen_range(2..4));
        let seq: Vec<Tensor> = (0..3)
            .map(|_| random_tensor(&[rows, inp], &mut rng))
            .collect();
        for (i, t) in seq.iter().enumerate() {
            s.add(format!("x{i}"), t.clone()).expect("fresh name");
        }
        let cell = LstmCell::new(&mut s, "lstm", inp, hid, &mut rng).expect("fresh name");
        let w = random_tensor(&[rows, hid], &mut rng);
        out.push(GradCase {
            name: "lstm_cell",
            store: s,
            build: Box::new(move |g: &mut Graph| {
                let xs: Vec<Var> = (0..3).map(|i| g.param(ParamId(i))).collect();
                let h = cell.run(g, &xs)?;
                let wv = g.input(w.clone());
                let p = g.mul(h, wv)?;
                Ok(g.sum(p))
            }),
        });
    }

    // embedding lookup + concat + flatten + slice + pick + row norm
    {
        let mut s = ParamStore::new();
        let emb =
            Embedding::new(&mut s, "e", random_tensor(&[6, cols], &mut rng)).expect("fresh name");
        s.add("other", random_tensor(&[2, 3], &mut rng))
            .expect("fresh name");
        let ids: Vec<usize> = vec![rng.gen_range(0..6), rng.gen_range(0..6)];
        let picks: Vec<usize> = (0..2).map(|_| rng.gen_range(0..cols + 3)).collect();
        out.push(GradCase {
            name: "embedding_concat_norm",
            store: s,
            build: Box::new(move |g: &mut Graph| {
                let e = emb.lookup(g, &ids)?;
                let o = g.param(ParamId(1));
                let c = g.concat(&[e, o])?;
                let stacked = g.concat_rows(&[c, c])?;
                let c = g.slice_cols(stacked, 0, cols + 3)?;
                let c = g.gather_rows(c, &[3, 0])?;
                let f = g.flatten(c)?;
                let sl = g.slice_cols(f, 1, cols + 2)?;
                let n = g.row_norm(sl);
                let p = g.pick_cols(c, &picks)?;
                let t = g.add(n, p)?;
                let l = g.l2_norm(t)?;
                let s2 = g.sum(t);
                g.add(l, s2)
            }),
        });
    }
    out
}
