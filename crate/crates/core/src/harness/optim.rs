use ndarray::{Array2, Zip};

use super::config::{Schedule, TrainConfig};
use crate::autograd::{Gradients, ParamStore};

/// Learning rate at 1-based `step`.
pub fn learning_rate(config: &TrainConfig, model_dim: usize, step: u64) -> f64 {
    match config.schedule {
        Schedule::Fixed => config.learning_rate,
        Schedule::Noam => {
            let s = step.max(1) as f64;
            let w = config.warmup_steps as f64;
            config.learning_rate * (model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Array2<f64>>,
    pub second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params.ids().map(|id| Array2::zeros(params.get(id).dim())).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn from_config(params: &ParamStore, config: &TrainConfig) -> Self {
        Self::new(params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    }

    /// One update with rate `lr`. Parameters without a gradient still decay
    /// their moments.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            match grads.get(id) {
                Some(g) => {
                    Zip::from(&mut *m)
                        .and(g)
                        .for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
                    Zip::from(&mut *v)
                        .and(g)
                        .for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
                }
                None => {
                    m.mapv_inplace(|x| b1 * x);
                    v.mapv_inplace(|x| b2 * x);
                }
            }
            Zip::from(params.get_mut(id))
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
    }
}
