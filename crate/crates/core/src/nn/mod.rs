//! Small dense neural-network kernel: exactly the layers the two networks
//! need, each with a hand-written backward pass.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{ModelCheckpoint, NamedTensor, TrainingMetadata, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{fit, mean_loss, TrainConfig, Trainable};
pub use layers::{relu, relu_backward, BiLstm, BiLstmCache, Conv1d, Linear, LstmCell, LstmSeqCache, LstmStepCache};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { context: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("backward requested without a recorded forward pass")]
    NoForwardPass,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Row-major real array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::ShapeMismatch { context: "tensor".into(), expected: shape, found: vec![data.len()] });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| rng.random_range(-bound..=bound)).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Anything that owns trainable tensors. Both listings must use the same order.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data.copy_from_slice(&values[at..at + n]);
            at += n;
        }
        assert_eq!(at, values.len(), "flat parameter length");
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// A copy with every value set to zero, used as a gradient buffer.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut g = self.clone();
        g.zero();
        g
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.data.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

/// Holds the activations recorded by one forward pass until backward
/// consumes them.
#[derive(Debug, Clone)]
pub struct Tape<C> {
    cache: Option<C>,
}

impl<C> Default for Tape<C> {
    fn default() -> Self {
        Self { cache: None }
    }
}

impl<C> Tape<C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, cache: C) {
        self.cache = Some(cache);
    }

    pub fn is_recorded(&self) -> bool {
        self.cache.is_some()
    }

    pub fn take(&mut self) -> Result<C, NnError> {
        self.cache.take().ok_or(NnError::NoForwardPass)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
