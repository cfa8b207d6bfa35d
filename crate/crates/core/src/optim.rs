//! Adaptive moment estimation.

use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};

/// Adam over a fixed parameter subset. Moment buffers are created lazily
/// per parameter and keyed by its store index.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    params: Vec<ParamId>,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: Vec<ParamId>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: vec![Vec::new(); params.len()],
            second: vec![Vec::new(); params.len()],
            params,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left untouched
    /// but their moments still decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (slot, &id) in self.params.iter().enumerate() {
            let Some(g) = grads.param(id) else {
                continue;
            };
            let value = store.get_mut(id);
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            if m.is_empty() {
                m.resize(value.len(), 0.0);
                v.resize(value.len(), 0.0);
            }
            for (((w, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::{Component, Init};
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn minimizes_a_quadratic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let w = store.add("w", Component::Probe, &[3], Init::Uniform(1.0), &mut rng);
        let mut opt = Adam::new(vec![w], 0.05);
        let target = Tensor::new(&[3], vec![0.3, -0.7, 1.5]);
        for _ in 0..500 {
            let mut g = Graph::new(&store);
            let p = g.param(w);
            let t = g.input(target.clone());
            let loss = g.mse(p, t);
            let grads = g.backward(loss);
            opt.step(&mut store, &grads);
        }
        for (a, b) in store.get(w).data().iter().zip(target.data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn untouched_without_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let a = store.add("a", Component::Probe, &[2], Init::Uniform(1.0), &mut rng);
        let b = store.add("b", Component::Probe, &[2], Init::Uniform(1.0), &mut rng);
        let before = store.get(b).clone();
        let mut opt = Adam::new(vec![a, b], 0.1);
        let mut g = Graph::new(&store);
        let p = g.param(a);
        let loss = g.mean(p);
        let grads = g.backward(loss);
        opt.step(&mut store, &grads);
        assert_eq!(store.get(b), &before);
    }
}
