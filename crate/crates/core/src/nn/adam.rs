use serde::{Deserialize, Serialize};

use super::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplier applied to the learning rate every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, decay_factor: 0.85, decay_every: 5 }
    }
}

/// Adam with bias correction and step-wise learning-rate decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    epochs_completed: usize,
}

impl Adam {
    pub fn new<P: Parameters>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            epochs_completed: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn current_learning_rate(&self) -> f64 {
        let every = self.config.decay_every.max(1);
        self.config.learning_rate * self.config.decay_factor.powi((self.epochs_completed / every) as i32)
    }

    pub fn end_epoch(&mut self) {
        self.epochs_completed += 1;
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let lr = self.current_learning_rate();
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let grads: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t.data.as_slice()).collect();
        for (k, t) in params.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..t.data.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                t.data[i] -= lr * mh / (vh.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let lin = Linear::new(3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let mut p = lin.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let g = p.zeros_like();
        for _ in 0..10 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p, lin);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut p = Linear::new(3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let start = p.flat();
        let mut g = p.zeros_like();
        let pattern: Vec<f64> = (0..g.num_parameters()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
        g.set_flat(&pattern);
        let config = AdamConfig { learning_rate: 1e-3, ..Default::default() };
        let mut adam = Adam::new(config, &p);
        // with a constant gradient both bias-corrected moments are exact, so
        // every step is lr * g / (|g| + eps)
        for _ in 0..50 {
            adam.step(&mut p, &g);
        }
        for ((a, b), gi) in p.flat().iter().zip(&start).zip(&pattern) {
            let expect = -50.0 * 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((a - b - expect).abs() < 1e-9, "{} vs {expect}", a - b);
        }
    }

    #[test]
    fn learning_rate_decays_every_five_epochs() {
        let p = Linear::new(3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..4 {
            adam.end_epoch();
        }
        assert_eq!(adam.current_learning_rate(), 1e-4);
        for _ in 0..6 {
            adam.end_epoch();
        }
        assert!((adam.current_learning_rate() - 1e-4 * 0.85 * 0.85).abs() < 1e-18);
    }
}
