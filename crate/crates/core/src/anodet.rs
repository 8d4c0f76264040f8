//! Reconstruction-error anomaly gate for LoS-AoA segments.
//!
//! The frozen LoSEstNet extractor turns a segment into `N` feature vectors.
//! An LSTM encoder reads them from a zero state; its final state seeds a
//! decoder that emits the sequence backwards, feeding each reconstructed
//! vector back as its next input. Segments whose squared reconstruction
//! error exceeds a calibrated threshold are discarded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losest::{middle_index, AoaEstimate, LosError, LosEstNet, SegmentTensor};
use crate::nn::{
    fit, Linear, LstmCell, LstmSeqCache, LstmStepCache, ModelCheckpoint, NnError, Parameters, Tensor, TrainConfig,
    Trainable, TrainingMetadata,
};

pub const ANODET_KIND: &str = "anodet";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("feature sequence is empty or ragged (expected width {expected})")]
    BadSequence { expected: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("calibration needs both classes, found {normal} normal and {anomalous} anomalous segments")]
    SingleClass { normal: usize, anomalous: usize },
    #[error("anomaly detector has no calibrated threshold")]
    MissingThreshold,
    #[error("no training sequences")]
    EmptyDataset,
    #[error(transparent)]
    Los(#[from] LosError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `N` feature vectors produced by the frozen extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub values: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, AdError> {
        let width = values.first().map_or(0, Vec::len);
        if width == 0 || values.iter().any(|v| v.len() != width) {
            return Err(AdError::BadSequence { expected: width });
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AdError::NonFinite("feature sequence"));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.values[0].len()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().flatten().map(|v| v * v).sum()
    }
}

/// Runs only the conv and linear part of `losest`.
pub fn extract_features(losest: &LosEstNet, seg: &SegmentTensor) -> Result<FeatureSequence, AdError> {
    FeatureSequence::new(losest.features(seg)?)
}

/// `sum_n ||x(n) - xhat(n)||^2`.
pub fn reconstruction_error(x: &FeatureSequence, recon: &[Vec<f64>]) -> f64 {
    x.values.iter().zip(recon).map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub reconstruction: Vec<Vec<f64>>,
    pub error: f64,
    pub is_anomalous: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdConfig {
    pub feature_dim: usize,
    pub hidden: usize,
}

impl Default for AdConfig {
    fn default() -> Self {
        Self { feature_dim: 3, hidden: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnoDetNet {
    pub config: AdConfig,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub head: Linear,
}

/// Activations of one reconstruction, indexed by sequence position.
#[derive(Debug, Clone)]
struct ReconCache {
    encoder: LstmSeqCache,
    /// Decoder hidden state from which `xhat(n)` was read.
    hidden: Vec<Vec<f64>>,
    /// `steps[n]` produced `hidden[n]` from position `n + 1`; the last slot is empty.
    steps: Vec<Option<LstmStepCache>>,
}

impl AnoDetNet {
    pub fn new(config: AdConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = LstmCell::new(config.feature_dim, config.hidden, &mut rng);
        let decoder = LstmCell::new(config.feature_dim, config.hidden, &mut rng);
        let head = Linear::new(config.hidden, config.feature_dim, &mut rng);
        Self { config, encoder, decoder, head }
    }

    fn run(&self, x: &FeatureSequence) -> Result<(Vec<Vec<f64>>, ReconCache), AdError> {
        if x.is_empty() || x.width() != self.config.feature_dim {
            return Err(AdError::BadSequence { expected: self.config.feature_dim });
        }
        let n = x.len();
        let zeros = vec![0.0; self.config.hidden];
        let (hs, encoder) = self.encoder.run(&x.values, &zeros, &zeros)?;
        let mut h = hs[n - 1].clone();
        let mut c = encoder.final_c.clone();
        let mut recon = vec![Vec::new(); n];
        let mut hidden = vec![Vec::new(); n];
        let mut steps = vec![None; n];
        recon[n - 1] = self.head.forward(&h)?;
        hidden[n - 1] = h.clone();
        for k in (0..n - 1).rev() {
            let (hn, cn, cache) = self.decoder.step(&recon[k + 1], &h, &c)?;
            recon[k] = self.head.forward(&hn)?;
            hidden[k] = hn.clone();
            steps[k] = Some(cache);
            h = hn;
            c = cn;
        }
        if recon.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AdError::NonFinite("reconstruction"));
        }
        Ok((recon, ReconCache { encoder, hidden, steps }))
    }

    /// Reverse-order reconstruction `xhat(1..N)`.
    pub fn reconstruct(&self, x: &FeatureSequence) -> Result<Vec<Vec<f64>>, AdError> {
        Ok(self.run(x)?.0)
    }

    pub fn error(&self, x: &FeatureSequence) -> Result<f64, AdError> {
        Ok(reconstruction_error(x, &self.reconstruct(x)?))
    }

    pub fn report(&self, x: &FeatureSequence, threshold: f64) -> Result<ReconReport, AdError> {
        let reconstruction = self.reconstruct(x)?;
        let error = reconstruction_error(x, &reconstruction);
        Ok(ReconReport { reconstruction, error, is_anomalous: !keeps(error, threshold), threshold })
    }

    /// Gradient of the reconstruction error. The decoder's inputs are its own
    /// outputs, so each `xhat(n + 1)` also receives the gradient of the step
    /// it fed.
    fn backward(&self, x: &FeatureSequence, recon: &[Vec<f64>], cache: &ReconCache, grad: &mut AnoDetNet) {
        let n = x.len();
        let hdim = self.config.hidden;
        let mut dh = vec![0.0; hdim];
        let mut dc = vec![0.0; hdim];
        let mut d_fed = vec![0.0; self.config.feature_dim];
        for k in 0..n {
            let dxhat: Vec<f64> =
                recon[k].iter().zip(&x.values[k]).zip(&d_fed).map(|((r, t), f)| 2.0 * (r - t) + f).collect();
            let dh_head = self.head.backward(&cache.hidden[k], &dxhat, &mut grad.head);
            for (a, b) in dh.iter_mut().zip(&dh_head) {
                *a += b;
            }
            match &cache.steps[k] {
                Some(step) => {
                    let (dx, dhp, dcp) = self.decoder.step_backward(step, &dh, &dc, &mut grad.decoder);
                    d_fed = dx;
                    dh = dhp;
                    dc = dcp;
                }
                None => {
                    let none = vec![vec![0.0; hdim]; n];
                    self.encoder.run_backward(&cache.encoder, &none, &dh, &dc, &mut grad.encoder);
                }
            }
        }
    }

    pub fn to_checkpoint(&self, metadata: TrainingMetadata, calibration: Option<&Calibration>) -> ModelCheckpoint {
        let mut ck = ModelCheckpoint::from_parameters(
            ANODET_KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            self,
            metadata,
        );
        if let Some(cal) = calibration {
            ck.threshold = Some(cal.threshold);
            ck.extra = serde_json::json!({ "calibration": cal });
        }
        ck
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, NnError> {
        ck.expect_kind(ANODET_KIND)?;
        let config: AdConfig =
            serde_json::from_value(ck.architecture.clone()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut net = AnoDetNet::new(config, 0);
        ck.load_into(&mut net)?;
        Ok(net)
    }
}

impl Parameters for AnoDetNet {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> =
            self.encoder.tensors().into_iter().map(|(n, t)| (format!("encoder.{n}"), t)).collect();
        v.extend(self.decoder.tensors().into_iter().map(|(n, t)| (format!("decoder.{n}"), t)));
        v.extend(self.head.tensors().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

impl Trainable for AnoDetNet {
    type Sample = FeatureSequence;

    fn loss(&self, x: &FeatureSequence) -> Result<f64, NnError> {
        self.error(x).map_err(to_nn)
    }

    fn accumulate_gradient(&self, x: &FeatureSequence, grad: &mut Self) -> Result<f64, NnError> {
        let (recon, cache) = self.run(x).map_err(to_nn)?;
        self.backward(x, &recon, &cache, grad);
        Ok(reconstruction_error(x, &recon))
    }
}

fn to_nn(e: AdError) -> NnError {
    match e {
        AdError::Nn(e) => e,
        other => NnError::NonFinite(other.to_string()),
    }
}

/// Trains on feature sequences of normal segments. `losest` is only read.
pub fn train_adnet(
    losest: &LosEstNet,
    normal: &[SegmentTensor],
    config: AdConfig,
    train: &TrainConfig,
) -> Result<(AnoDetNet, TrainingMetadata), AdError> {
    let feats = normal.iter().map(|s| extract_features(losest, s)).collect::<Result<Vec<_>, _>>()?;
    train_on_features(&feats, config, train)
}

pub fn train_on_features(
    feats: &[FeatureSequence],
    config: AdConfig,
    train: &TrainConfig,
) -> Result<(AnoDetNet, TrainingMetadata), AdError> {
    if feats.is_empty() {
        return Err(AdError::EmptyDataset);
    }
    let net = AnoDetNet::new(config, train.seed);
    Ok(fit(net, feats, train)?)
}

/// Inclusive boundary: an error equal to the threshold is kept.
pub fn keeps(error: f64, threshold: f64) -> bool {
    error <= threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Fraction of anomalous-labelled segments with error above the threshold.
    pub anomalous_exceedance: f64,
    /// Fraction of normal-labelled segments with error above the threshold.
    pub normal_exceedance: f64,
    pub normal_count: usize,
    pub anomalous_count: usize,
    pub label_error_deg: f64,
}

impl Calibration {
    pub fn separation(&self) -> f64 {
        self.anomalous_exceedance - self.normal_exceedance
    }
}

fn exceedance(errors: &[f64], threshold: f64) -> f64 {
    errors.iter().filter(|&&e| !keeps(e, threshold)).count() as f64 / errors.len() as f64
}

/// Sweeps thresholds halfway between consecutive distinct error values and
/// returns the one maximizing anomalous minus normal exceedance. Ties go to
/// the larger threshold.
pub fn calibrate_threshold(normal: &[f64], anomalous: &[f64], label_error_deg: f64) -> Result<Calibration, AdError> {
    if normal.is_empty() || anomalous.is_empty() {
        return Err(AdError::SingleClass { normal: normal.len(), anomalous: anomalous.len() });
    }
    if normal.iter().chain(anomalous).any(|e| !e.is_finite()) {
        return Err(AdError::NonFinite("calibration errors"));
    }
    let mut values: Vec<f64> = normal.iter().chain(anomalous).copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut candidates = vec![values[0] * 0.5];
    candidates.extend(values.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(values[values.len() - 1]);
    let mut best: Option<Calibration> = None;
    for t in candidates {
        let cal = Calibration {
            threshold: t,
            anomalous_exceedance: exceedance(anomalous, t),
            normal_exceedance: exceedance(normal, t),
            normal_count: normal.len(),
            anomalous_count: anomalous.len(),
            label_error_deg,
        };
        if best.as_ref().is_none_or(|b| cal.separation() >= b.separation()) {
            best = Some(cal);
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Splits `(reconstruction error, LoS-AoA error in degrees)` records at
/// `label_error_deg` and calibrates on the two groups.
pub fn calibrate_labelled(records: &[(f64, f64)], label_error_deg: f64) -> Result<Calibration, AdError> {
    let (mut normal, mut anomalous) = (Vec::new(), Vec::new());
    for &(e, aoa_err) in records {
        if aoa_err > label_error_deg {
            anomalous.push(e);
        } else {
            normal.push(e);
        }
    }
    calibrate_threshold(&normal, &anomalous, label_error_deg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub estimate: AoaEstimate,
    pub error: f64,
    pub kept: bool,
}

/// LoSEstNet plus a calibrated AnoDetNet.
#[derive(Debug, Clone)]
pub struct Gate {
    pub losest: LosEstNet,
    pub adnet: AnoDetNet,
    pub threshold: f64,
}

impl Gate {
    pub fn new(losest: LosEstNet, adnet: AnoDetNet, threshold: f64) -> Self {
        Self { losest, adnet, threshold }
    }

    pub fn from_checkpoints(losest: &ModelCheckpoint, adnet: &ModelCheckpoint) -> Result<Self, AdError> {
        let threshold = adnet.threshold.ok_or(AdError::MissingThreshold)?;
        Ok(Self::new(LosEstNet::from_checkpoint(losest)?, AnoDetNet::from_checkpoint(adnet)?, threshold))
    }

    /// Middle-point estimate and whether the segment passes the gate.
    pub fn gate(&self, seg: &SegmentTensor) -> Result<GateDecision, AdError> {
        let estimate = self.losest.estimate(seg)?;
        debug_assert_eq!(estimate.segment_mid_index, middle_index(seg.n));
        let error = self.adnet.error(&extract_features(&self.losest, seg)?)?;
        Ok(GateDecision { estimate, error, kept: keeps(error, self.threshold) })
    }
}
