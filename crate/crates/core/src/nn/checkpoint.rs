use serde::{Deserialize, Serialize};

use super::{NnError, Parameters, Tensor};

pub const CHECKPOINT_FORMAT: &str = "locnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub final_validation_loss: f64,
    pub train_loss_history: Vec<f64>,
    pub validation_loss_history: Vec<f64>,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Serialized model weights with architecture and training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub architecture: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
    pub metadata: TrainingMetadata,
    /// Gating threshold, present once an anomaly detector is calibrated.
    pub threshold: Option<f64>,
    /// Model-specific extras (normalization constants, calibration report).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl ModelCheckpoint {
    pub fn from_parameters<P: Parameters>(
        kind: &str,
        architecture: serde_json::Value,
        params: &P,
        metadata: TrainingMetadata,
    ) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor { name, shape: t.shape.clone(), values: t.data.clone() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            architecture,
            tensors,
            metadata,
            threshold: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), NnError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.kind != kind {
            return Err(NnError::Checkpoint(format!("expected a `{kind}` model, found `{}`", self.kind)));
        }
        Ok(())
    }

    /// Copies the stored tensors into `params`, checking names and shapes.
    pub fn load_into<P: Parameters>(&self, params: &mut P) -> Result<(), NnError> {
        let names: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        if names.len() != self.tensors.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                names.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), stored) in names.iter().zip(&self.tensors) {
            if *name != stored.name || *shape != stored.shape {
                return Err(NnError::Checkpoint(format!(
                    "tensor `{}` {:?} does not match `{name}` {shape:?}",
                    stored.name, stored.shape
                )));
            }
        }
        for (dst, stored) in params.tensors_mut().into_iter().zip(&self.tensors) {
            *dst = Tensor::new(stored.shape.clone(), stored.values.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let ck: ModelCheckpoint = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, LstmCell};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_restores_weights() {
        let lin = Linear::new(4, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let ck = ModelCheckpoint::from_parameters("probe", serde_json::json!({"in": 4}), &lin, Default::default());
        let back = ModelCheckpoint::from_json(&ck.to_json()).unwrap();
        let mut other = Linear::new(4, 3, &mut ChaCha8Rng::seed_from_u64(2));
        back.load_into(&mut other).unwrap();
        assert_eq!(other, lin);
    }

    #[test]
    fn rejects_wrong_version_and_shape() {
        let lin = Linear::new(4, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let mut ck = ModelCheckpoint::from_parameters("probe", serde_json::Value::Null, &lin, Default::default());
        let mut wrong = Linear::new(5, 3, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(ck.load_into(&mut wrong).is_err());
        let mut cell = LstmCell::new(2, 2, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(ck.load_into(&mut cell).is_err());
        ck.version = 99;
        assert!(ModelCheckpoint::from_json(&ck.to_json()).is_err());
        assert!(ck.expect_kind("probe").is_err());
    }
}
