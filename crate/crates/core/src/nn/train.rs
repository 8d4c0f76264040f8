use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, NnError, Parameters, TrainingMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the samples held out for model selection.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 8, epochs: 100, validation_fraction: 0.1, seed: 1 }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, train_size: usize) -> usize {
        train_size.div_ceil(self.batch_size.max(1))
    }
}

/// A model that can report its per-sample loss and gradient.
pub trait Trainable: Parameters + Clone {
    type Sample;

    fn loss(&self, sample: &Self::Sample) -> Result<f64, NnError>;

    /// Accumulates `d loss / d params` into `grad` and returns the loss.
    fn accumulate_gradient(&self, sample: &Self::Sample, grad: &mut Self) -> Result<f64, NnError>;
}

pub fn mean_loss<M: Trainable>(model: &M, samples: &[&M::Sample]) -> Result<f64, NnError> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in samples {
        total += model.loss(s)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch Adam on the mean per-sample loss. The returned model is the
/// one with the lowest validation loss seen at the end of any epoch.
pub fn fit<M: Trainable>(mut model: M, samples: &[M::Sample], config: &TrainConfig) -> Result<(M, TrainingMetadata), NnError> {
    if samples.is_empty() {
        return Err(NnError::Checkpoint("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if samples.len() >= 10 { ((samples.len() as f64) * config.validation_fraction).round() as usize } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&M::Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut train: Vec<usize> = train_idx.to_vec();

    let mut adam = Adam::new(config.adam.clone(), &model);
    let mut grad = model.zeros_like();
    let mut meta = TrainingMetadata {
        seed: config.seed,
        epochs: config.epochs,
        train_size: train.len(),
        validation_size: val.len(),
        ..Default::default()
    };
    let mut best: Option<(f64, M)> = None;
    let batch = config.batch_size.max(1);

    for epoch in 1..=config.epochs {
        train.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train.chunks(batch) {
            grad.zero();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += model.accumulate_gradient(&samples[i], &mut grad)?;
            }
            if !batch_loss.is_finite() || !grad.all_finite() {
                return Err(NnError::Diverged { epoch });
            }
            grad.scale(1.0 / chunk.len() as f64);
            adam.step(&mut model, &grad);
            epoch_loss += batch_loss;
        }
        adam.end_epoch();
        let train_loss = epoch_loss / train.len() as f64;
        if !train_loss.is_finite() || !model.all_finite() {
            return Err(NnError::Diverged { epoch });
        }
        let val_loss = if val.is_empty() { train_loss } else { mean_loss(&model, &val)? };
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        meta.train_loss_history.push(train_loss);
        meta.validation_loss_history.push(val_loss);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            meta.best_epoch = epoch;
            meta.final_validation_loss = val_loss;
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[derive(Clone)]
    struct Probe(Linear);

    impl Parameters for Probe {
        fn tensors(&self) -> Vec<(String, &crate::nn::Tensor)> {
            self.0.tensors()
        }
        fn tensors_mut(&mut self) -> Vec<&mut crate::nn::Tensor> {
            self.0.tensors_mut()
        }
    }

    impl Trainable for Probe {
        type Sample = (Vec<f64>, f64);
        fn loss(&self, s: &Self::Sample) -> Result<f64, NnError> {
            let y = self.0.forward(&s.0)?[0];
            Ok((y - s.1).powi(2))
        }
        fn accumulate_gradient(&self, s: &Self::Sample, grad: &mut Self) -> Result<f64, NnError> {
            let y = self.0.forward(&s.0)?[0];
            self.0.backward(&s.0, &[2.0 * (y - s.1)], &mut grad.0);
            Ok((y - s.1).powi(2))
        }
    }

    #[test]
    fn fits_a_linear_map_and_reduces_loss() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data: Vec<(Vec<f64>, f64)> = (0..200)
            .map(|_| {
                let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let y = 0.7 * x[0] - 0.2 * x[1] + 0.1;
                (x, y)
            })
            .collect();
        let model = Probe(Linear::new(2, 1, &mut rng));
        let config = TrainConfig { adam: AdamConfig { learning_rate: 1e-2, ..Default::default() }, epochs: 30, ..Default::default() };
        let (_, meta) = fit(model, &data, &config).unwrap();
        assert!(meta.train_loss_history.last().unwrap() < &meta.train_loss_history[0]);
        assert!(meta.final_validation_loss < 1e-3);
        assert_eq!(meta.train_size, 180);
        assert_eq!(config.steps_per_epoch(3000), 375);
    }
}
