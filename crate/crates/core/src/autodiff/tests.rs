use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn l2_norm_of_three_four() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::from_vec(vec![3.0, 4.0]));
    let n = g.l2_norm(x).unwrap();
    assert_eq!(g.scalar(n), 5.0);
}

#[test]
fn square_derivative_at_three() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(3.0)).unwrap();
    let g = {
        let mut g = Graph::new(&store);
        let v = g.param(x);
        let y = g.square(v);
        let s = g.sum(y);
        g.backward(s).unwrap()
    };
    assert_eq!(g.param(x).unwrap(), &[6.0]);
}

#[test]
fn identity_one_by_one_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let c = 3;
    let mut w = vec![0.0; c * c];
    for i in 0..c {
        w[i * c + i] = 1.0;
    }
    let w = store
        .add("w", Tensor::new(&[c, c, 1, 1], w).unwrap())
        .unwrap();
    let b = store.add("b", Tensor::zeros(&[c])).unwrap();
    let input = random_tensor(&[2, c, 5, 5], &mut rng);
    let mut g = Graph::new(&store);
    let x = g.input(input.clone());
    let (wv, bv) = (g.param(w), g.param(b));
    let y = g.conv2d(x, wv, bv, 1, 0).unwrap();
    assert_eq!(g.value(y), &input);
}

#[test]
fn conv_same_padding_stride_two_halves() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let c1 = Conv2d::new(&mut store, "c1", 4, 16, 5, 2, &mut rng).unwrap();
    let c2 = Conv2d::new(&mut store, "c2", 16, 32, 3, 2, &mut rng).unwrap();
    let mut g = Graph::new(&store);
    let x = g.input(random_tensor(&[1, 4, 64, 64], &mut rng));
    let h = c1.forward(&mut g, x).unwrap();
    let y = c2.forward(&mut g, h).unwrap();
    assert_eq!(g.shape(y), &[1, 32, 16, 16]);
}

#[test]
fn lstm_with_zero_weights_outputs_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", 4, 6, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(&store);
    let steps: Vec<Var> = (0..3)
        .map(|_| g.input(random_tensor(&[2, 4], &mut rng)))
        .collect();
    let h = cell.run(&mut g, &steps).unwrap();
    assert!(g.data(h).iter().all(|&v| v == 0.0));
}

#[test]
fn shape_errors_report_both_shapes() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = g.input(Tensor::zeros(&[3]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let d = Dense::new(&mut store, "d", 5, 4, &mut rng).unwrap();
    let x = random_tensor(&[3, 5], &mut rng);
    let run = || {
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let y = d.forward(&mut g, xv).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn masked_log_softmax_ignores_masked_entries() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::new(&[1, 3], vec![0.0, 5.0, 0.0]).unwrap());
    let y = g.masked_log_softmax(x, &[true, false, true]).unwrap();
    let lp = g.data(y);
    assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12);
    assert_eq!(lp[1], 0.0);
    assert!(g.masked_log_softmax(x, &[false, false, false]).is_err());
}

#[test]
fn zero_parameter_graph_has_zero_error() {
    let mut store = ParamStore::new();
    let err = grad_check(&mut store, 1e-5, |g| {
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0]));
        Ok(g.sum(x))
    })
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn non_scalar_output_is_usage_error() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let r = grad_check(&mut store, 1e-5, |g| {
        let id = g.store().id("w").unwrap();
        Ok(g.param(id))
    });
    assert!(matches!(r, Err(Error::Usage(_))));
    let r = grad_check(&mut store, 1.0, |g| {
        let x = g.input(Tensor::scalar(1.0));
        Ok(x)
    });
    assert!(matches!(r, Err(Error::Usage(_))));
}

#[test]
fn dense_tanh_mse_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let d = Dense::new(&mut store, "d", 4, 3, &mut rng).unwrap();
    let x = random_tensor(&[5, 4], &mut rng);
    let target = random_tensor(&[5, 3], &mut rng);
    let err = grad_check(&mut store, 1e-5, |g| {
        let xv = g.input(x.clone());
        let t = g.input(target.clone());
        let h = d.forward(g, xv)?;
        let y = g.tanh(h);
        g.mse(y, t)
    })
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn every_primitive_passes_grad_check_over_seeds() {
    for seed in 0..20 {
        for mut case in primitive_cases(seed) {
            let err = case.check().unwrap();
            assert!(
                err < 1e-4,
                "{} seed {seed}: max relative error {err}",
                case.name
            );
        }
    }
}

#[test]
fn embedding_gradient_touches_only_used_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "e", random_tensor(&[5, 3], &mut rng)).unwrap();
    let grads = {
        let mut g = Graph::new(&store);
        let e = emb.lookup(&mut g, &[1, 3, 1]).unwrap();
        let s = g.sum(e);
        g.backward(s).unwrap()
    };
    let gt = grads.param(emb.table).unwrap();
    for row in 0..5 {
        let touched = gt[row * 3..row * 3 + 3].iter().any(|&v| v != 0.0);
        assert_eq!(touched, row == 1 || row == 3, "row {row}");
    }
}
