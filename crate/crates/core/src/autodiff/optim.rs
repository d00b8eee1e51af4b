//! Adam with bias correction and L2 weight decay.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::autodiff::param::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay · w` before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Optimiser state: one pair of moment accumulators per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: Vec<Array2<T>>,
    second: Vec<Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Array2::zeros(p.value().raw_dim())).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Array2<T>] {
        &self.second
    }

    /// One update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let k = id.index();
            let p = store.param_mut(id);
            let mask = p.dense_mask().cloned();
            let grad = p.grad().clone();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let value = store.value_mut(id);
            Zip::from(&mut *value).and(m).and(v).and(&grad).for_each(|w, m, v, &g| {
                let g = g + wd * *w;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
            if let Some(mask) = mask {
                *value *= &*mask;
                self.first[k] *= &*mask;
                self.second[k] *= &*mask;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::param::ParamRole;
    use crate::autodiff::tape::Tape;
    use crate::expander::ExpanderMask;
    use ndarray::array;

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", ParamRole::Head, array![[1.0, -2.0]]);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &store);
        adam.step(&mut store);
        assert_eq!(store.get(id).value(), &array![[1.0, -2.0]]);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_towards_zero() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", ParamRole::Head, array![[1.0, -2.0]]);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() }, &store);
        adam.step(&mut store);
        let w = store.get(id).value();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", ParamRole::Head, array![[0.0, 0.0, 0.0]]);
        store.param_mut(id).grad_mut().assign(&array![[3.0, -0.25, 1e-3]]);
        let lr = 0.01;
        let mut adam = Adam::new(AdamConfig { lr, ..Default::default() }, &store);
        adam.step(&mut store);
        // m̂ = g and v̂ = g², so Δ = -lr · g / (|g| + eps).
        for (w, g) in store.get(id).value().iter().zip([3.0f64, -0.25, 1e-3]) {
            assert!((w + lr * g.signum()).abs() < lr * 1e-8 / g.abs() + 1e-15);
        }
    }

    #[test]
    fn masked_entries_stay_zero_for_100_steps() {
        let mut store = ParamStore::<f64>::new();
        let mask = ExpanderMask::sample(3, 5, 0.4, 11).unwrap();
        let dense = mask.to_dense::<f64>();
        let id = store.add_masked("w", ParamRole::Update, Array2::from_elem((3, 5), 0.7), mask);
        let mut adam = Adam::new(AdamConfig { lr: 0.05, weight_decay: 1e-3, ..Default::default() }, &store);
        for _ in 0..100 {
            store.zero_grad();
            let mut t = Tape::new();
            let w = t.param(&store, id).unwrap();
            let x = t.constant(Array2::from_elem((2, 3), 1.5)).unwrap();
            let y = t.matmul(x, w).unwrap();
            let y = t.tanh(y).unwrap();
            let l = t.sum(y).unwrap();
            let g = t.backward(l).unwrap();
            store.accumulate(&t, &g);
            adam.step(&mut store);
        }
        let w = store.get(id).value();
        for ((i, j), &m) in dense.indexed_iter() {
            if m == 0.0 {
                assert_eq!(w[[i, j]], 0.0);
                assert_eq!(adam.first_moments()[0][[i, j]], 0.0);
                assert_eq!(adam.second_moments()[0][[i, j]], 0.0);
            }
        }
    }
}
