use super::tensor::{ParamId, ParamStore};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    frozen: Vec<ParamId>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
            frozen: Vec::new(),
        }
    }

    /// Exclude a parameter from updates (its gradient is still cleared).
    pub fn freeze(&mut self, id: ParamId) {
        if !self.frozen.contains(&id) {
            self.frozen.push(id);
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store
                .ids()
                .map(|id| vec![0.0; store.get(id).len()])
                .collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            if self.frozen.contains(&id) {
                continue;
            }
            let grad = store.grad(id).to_vec();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let value = store.get_mut(id).data_mut();
            for k in 0..grad.len() {
                let gk = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                value[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        store.updates += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![0.3, -1.2])).unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut store);
        }
        assert_eq!(store.get(id).data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0)).unwrap();
        let mut adam = Adam::new(0.1);
        store.grad_mut(id)[0] = 1.0;
        adam.step(&mut store);
        assert!((store.get(id).data()[0] + 0.1).abs() < 1e-6);
        assert_eq!(store.grad(id), &[0.0]);
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(5e-4);
        let mut prev = 1.0f64;
        for _ in 0..200 {
            let grads = {
                let mut g = Graph::new(&store);
                let w = g.param(id);
                let loss = g.square(w);
                g.backward(loss).unwrap()
            };
            grads.accumulate_into(&mut store);
            adam.step(&mut store);
            let w = store.get(id).data()[0];
            assert!(w.abs() < prev.abs());
            prev = w;
        }
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0)).unwrap();
        let b = store.add("b", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(0.1);
        adam.freeze(a);
        store.grad_mut(a)[0] = 1.0;
        store.grad_mut(b)[0] = 1.0;
        adam.step(&mut store);
        assert_eq!(store.get(a).data()[0], 1.0);
        assert!(store.get(b).data()[0] < 1.0);
    }
}
