//! Adam with default moment coefficients.

use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    /// `None` marks a parameter excluded from optimisation (no state kept).
    moments: Vec<Option<(Mat, Mat)>>,
}

impl Adam {
    /// Optimiser over the parameters for which `trainable` returns true.
    pub fn new(store: &ParamStore, lr: f64, trainable: impl Fn(ParamId) -> bool) -> Self {
        let moments = store
            .iter()
            .map(|(id, p)| {
                trainable(id).then(|| {
                    let (r, c) = p.value.shape();
                    (Mat::zeros(r, c), Mat::zeros(r, c))
                })
            })
            .collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.moments.get(id.0).is_some_and(|m| m.is_some())
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update from accumulated gradients (indexed by parameter id;
    /// `None` entries are treated as zero gradient).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>]) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (i, slot) in self.moments.iter_mut().enumerate() {
            let Some((m, v)) = slot else { continue };
            let value = store.value_mut(ParamId(i));
            let g = grads.get(i).and_then(|g| g.as_ref());
            for k in 0..m.len() {
                let gk = g.map_or(0.0, |g| g.as_slice()[k]);
                let mk = &mut m.as_mut_slice()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let vk = &mut v.as_mut_slice()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let m_hat = *mk / bc1;
                let v_hat = *vk / bc2;
                value.as_mut_slice()[k] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamKind::Trainable, Mat::scalar(1.0));
        let b = store.add("b", ParamKind::CommonMemory, Mat::scalar(1.0));
        let mut opt = Adam::new(&store, 1e-3, |id| id != b);
        opt.step(&mut store, &[Some(Mat::scalar(4.0)), Some(Mat::scalar(4.0))]);
        assert!((store.value(a)[(0, 0)] - (1.0 - 1e-3)).abs() < 1e-9);
        assert_eq!(store.value(b)[(0, 0)], 1.0);
        assert!(!opt.is_trainable(b));
    }
}
