use serde::{Deserialize, Serialize};

use super::ParamStore;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn with_defaults(store: &ParamStore) -> Self {
        Self::new(store, 1e-3, 0.9, 0.999, 1e-8)
    }

    /// One update of every parameter from `grads`, indexed like the store.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id).data_mut();
            let g = &grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            assert_eq!(p.len(), g.len(), "gradient shape for parameter {k}");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    /// Moment buffers must line up with the store's parameter shapes.
    pub fn matches(&self, store: &ParamStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .iter()
                .enumerate()
                .all(|(k, (_, _, t))| self.m[k].len() == t.len() && self.v[k].len() == t.len())
    }
}
