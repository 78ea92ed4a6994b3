//! Adam with L2 weight decay folded into the gradient.

use ndarray::{Array2, Zip};

use crate::params::{Gradients, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Array2<f64>>,
    pub second_moment: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParameterStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.iter().map(|(_, _, v)| Array2::zeros(v.dim())).collect();
        Adam { config, step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn update(&mut self, store: &mut ParameterStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            Zip::from(store.get_mut(id)).and(grads.get(id)).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + weight_decay * *p;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParameterStore::new();
        let id = store.register("w", array![[1.0, -1.0]]).unwrap();
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).assign(&array![[0.5, -2.0]]);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), &store);
        adam.update(&mut store, &grads);
        let w = store.get(id);
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParameterStore::new();
        let id = store.register("w", array![[3.0]]).unwrap();
        let mut adam = Adam::new(AdamConfig::new(0.05, 0.0), &store);
        for _ in 0..500 {
            let mut g = Gradients::zeros_like(&store);
            g.get_mut(id)[[0, 0]] = 2.0 * (store.get(id)[[0, 0]] - 1.0);
            adam.update(&mut store, &g);
        }
        assert!((store.get(id)[[0, 0]] - 1.0).abs() < 1e-2);
    }
}
