//! Line-of-sight angle estimation by fusing the extracted paths of `N`
//! consecutive trajectory points.
//!
//! Every point's `L x 4` encoding goes through the same convolution stack
//! and linear layer, the resulting `N x 3` sequence through a BiLSTM, and a
//! small head produces `(sin, cos)` per position. The estimate for a segment
//! is read at the middle position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, wrap_pi};
use crate::nn::{
    fit, relu, relu_backward, BiLstm, BiLstmCache, Conv1d, Linear, ModelCheckpoint, NnError, Parameters, Tape,
    Tensor, TrainConfig, Trainable, TrainingMetadata,
};
use crate::nomp::ChannelParamSet;
use crate::observation::{PointObservation, TrajectoryObservation};

pub const LOSEST_KIND: &str = "losest";
pub const FC_KIND: &str = "fc-baseline";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LosError {
    #[error("segment has no path with non-zero gain")]
    DegenerateSegment,
    #[error("expected {expected} points of {paths} paths, found {found_points} points")]
    SegmentShape { expected: usize, paths: usize, found_points: usize },
    #[error("path set has no path with non-zero gain")]
    AllZeroGains,
    #[error("no segment passed the training criteria ({total} candidates: {criterion1} failed the LoS-visibility criterion, {criterion2} failed the gain floor)")]
    EmptyDataset { total: usize, criterion1: usize, criterion2: usize },
    #[error("non-finite network output")]
    NonFinite,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `N x L x 4` network input: `[gain_norm, delay_norm, cos, sin]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTensor {
    pub n: usize,
    pub l: usize,
    pub values: Vec<f64>,
}

impl SegmentTensor {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.l * 4..(i + 1) * self.l * 4]
    }
}

/// Zero-based middle position of an `n`-point segment.
pub fn middle_index(n: usize) -> usize {
    n / 2
}

/// Encodes `N` path sets. Paths are re-sorted by descending gain, gains are
/// divided by the segment maximum and delays by `delay_scale` (the number of
/// subcarriers).
pub fn encode_segment(params: &[ChannelParamSet], delay_scale: f64) -> Result<SegmentTensor, LosError> {
    let n = params.len();
    let l = params.first().map(|p| p.len()).unwrap_or(0);
    if n == 0 || l == 0 || params.iter().any(|p| p.len() != l) {
        return Err(LosError::SegmentShape { expected: n, paths: l, found_points: n });
    }
    let max_gain = params.iter().map(|p| p.max_gain()).fold(0.0, f64::max);
    if !(max_gain > 0.0) {
        return Err(LosError::DegenerateSegment);
    }
    let mut values = Vec::with_capacity(n * l * 4);
    for set in params {
        let mut paths = set.paths.clone();
        paths.sort_by(|a, b| b.gain_mag.total_cmp(&a.gain_mag));
        for p in &paths {
            values.extend_from_slice(&[p.gain_mag / max_gain, p.delay / delay_scale, p.aoa.cos(), p.aoa.sin()]);
        }
    }
    Ok(SegmentTensor { n, l, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoaEstimate {
    pub sin: f64,
    pub cos: f64,
    /// `atan2(sin, cos)`, in `(-pi, pi]`.
    pub angle: f64,
    pub segment_mid_index: usize,
}

impl AoaEstimate {
    pub fn from_sin_cos(sin: f64, cos: f64, segment_mid_index: usize) -> Self {
        Self { sin, cos, angle: sin.atan2(cos), segment_mid_index }
    }

    pub fn from_angle(angle: f64) -> Self {
        let a = wrap_pi(angle);
        Self { sin: a.sin(), cos: a.cos(), angle: a, segment_mid_index: 0 }
    }

    /// Absolute angular error against `truth`, degrees.
    pub fn error_deg(&self, truth: f64) -> f64 {
        angle_diff(self.angle, truth).abs().to_degrees()
    }
}

fn live_paths(params: &ChannelParamSet) -> Result<impl Iterator<Item = &crate::nomp::PathEstimate>, LosError> {
    if params.max_gain() <= 0.0 {
        return Err(LosError::AllZeroGains);
    }
    Ok(params.paths.iter().filter(|p| p.gain_mag > 0.0))
}

/// Angle of the strongest path.
pub fn rss_baseline(params: &ChannelParamSet) -> Result<AoaEstimate, LosError> {
    let p = live_paths(params)?.max_by(|a, b| a.gain_mag.total_cmp(&b.gain_mag)).expect("non-empty");
    Ok(AoaEstimate::from_angle(p.aoa))
}

/// Angle of the earliest path.
pub fn toa_baseline(params: &ChannelParamSet) -> Result<AoaEstimate, LosError> {
    let p = live_paths(params)?.min_by(|a, b| a.delay.total_cmp(&b.delay)).expect("non-empty");
    Ok(AoaEstimate::from_angle(p.aoa))
}

/// Angle of the path closest to the true bearing. Evaluation only.
pub fn near_oracle(params: &ChannelParamSet, truth: f64) -> Result<AoaEstimate, LosError> {
    let p = live_paths(params)?
        .min_by(|a, b| angle_diff(a.aoa, truth).abs().total_cmp(&angle_diff(b.aoa, truth).abs()))
        .expect("non-empty");
    Ok(AoaEstimate::from_angle(p.aoa))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCriteria {
    pub max_los_error_deg: f64,
    pub min_top_gain_dbm: f64,
    /// Converts a linear path amplitude to dBm: `20 log10 |g| + tx_power_dbm`.
    pub tx_power_dbm: f64,
}

impl Default for TrainingCriteria {
    fn default() -> Self {
        Self { max_los_error_deg: 10.0, min_top_gain_dbm: -80.0, tx_power_dbm: 20.0 }
    }
}

impl TrainingCriteria {
    pub fn gain_dbm(&self, gain: f64) -> f64 {
        20.0 * gain.log10() + self.tx_power_dbm
    }

    /// Some extracted path lies within the angular tolerance of the true bearing.
    pub fn los_extracted(&self, p: &PointObservation) -> bool {
        p.params
            .paths
            .iter()
            .filter(|q| q.gain_mag > 0.0)
            .any(|q| angle_diff(q.aoa, p.true_los_aoa).abs().to_degrees() <= self.max_los_error_deg)
    }

    pub fn strong_enough(&self, p: &PointObservation) -> bool {
        let g = p.params.max_gain();
        g > 0.0 && self.gain_dbm(g) > self.min_top_gain_dbm
    }
}

/// A window of `N` consecutive points with the true bearing at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub trajectory_id: u64,
    pub start: usize,
    pub input: SegmentTensor,
    pub labels: Vec<f64>,
}

impl Segment {
    pub fn mid(&self) -> usize {
        middle_index(self.input.n)
    }

    pub fn mid_label(&self) -> f64 {
        self.labels[self.mid()]
    }

    /// Trajectory point index of the segment's middle point.
    pub fn mid_point(&self) -> usize {
        self.start + self.mid()
    }
}

/// All sliding windows (step 1) of `n` points. Windows whose gains are all
/// zero are skipped.
pub fn segments_of(traj: &TrajectoryObservation, n: usize) -> Vec<Segment> {
    if traj.points.len() < n {
        return Vec::new();
    }
    traj.points
        .windows(n)
        .enumerate()
        .filter_map(|(start, w)| {
            let params: Vec<ChannelParamSet> = w.iter().map(|p| p.params.clone()).collect();
            let input = encode_segment(&params, traj.num_subcarriers as f64).ok()?;
            Some(Segment { trajectory_id: traj.id, start, input, labels: w.iter().map(|p| p.true_los_aoa).collect() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub kept: usize,
    pub failed_criterion1: usize,
    pub failed_criterion2: usize,
}

impl DatasetStats {
    pub fn retention(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.kept as f64 / self.total as f64
        }
    }
}

/// Keeps the segments in which every point saw its direct path among the
/// extracted ones and every point's strongest path clears the gain floor.
pub fn build_dataset(
    trajectories: &[TrajectoryObservation],
    n: usize,
    criteria: &TrainingCriteria,
) -> Result<(Vec<Segment>, DatasetStats), LosError> {
    let mut stats = DatasetStats::default();
    let mut kept = Vec::new();
    for traj in trajectories {
        for seg in segments_of(traj, n) {
            stats.total += 1;
            let window = &traj.points[seg.start..seg.start + n];
            let c1 = window.iter().all(|p| criteria.los_extracted(p));
            let c2 = window.iter().all(|p| criteria.strong_enough(p));
            if !c1 {
                stats.failed_criterion1 += 1;
            }
            if !c2 {
                stats.failed_criterion2 += 1;
            }
            if c1 && c2 {
                kept.push(seg);
            }
        }
    }
    stats.kept = kept.len();
    if kept.is_empty() {
        return Err(LosError::EmptyDataset {
            total: stats.total,
            criterion1: stats.failed_criterion1,
            criterion2: stats.failed_criterion2,
        });
    }
    Ok((kept, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosEstConfig {
    pub n: usize,
    pub l: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub kernel_taps: usize,
    pub feature_dim: usize,
    pub hidden: usize,
}

impl Default for LosEstConfig {
    fn default() -> Self {
        Self { n: 5, l: 5, conv_layers: 2, conv_channels: 4, kernel_taps: 3, feature_dim: 3, hidden: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosEstNet {
    pub config: LosEstConfig,
    pub convs: Vec<Conv1d>,
    pub linear: Linear,
    pub bilstm: BiLstm,
    pub head: Linear,
}

/// Activations of the per-point extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCache {
    /// Input to each conv layer followed by the final activation.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each conv layer.
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LosEstCache {
    points: Vec<PointCache>,
    bilstm: BiLstmCache,
    hidden: Vec<Vec<f64>>,
}

impl LosEstNet {
    pub fn new(config: LosEstConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(config.conv_layers);
        for k in 0..config.conv_layers {
            let cin = if k == 0 { 4 } else { config.conv_channels };
            convs.push(Conv1d::new(config.kernel_taps, cin, config.conv_channels, &mut rng));
        }
        let flat = if config.conv_layers == 0 { 4 * config.l } else { config.conv_channels * config.l };
        let linear = Linear::new(flat, config.feature_dim, &mut rng);
        let bilstm = BiLstm::new(config.feature_dim, config.hidden, &mut rng);
        let head = Linear::new(2 * config.hidden, 2, &mut rng);
        Self { config, convs, linear, bilstm, head }
    }

    fn check(&self, seg: &SegmentTensor) -> Result<(), LosError> {
        if seg.n != self.config.n || seg.l != self.config.l || seg.values.len() != seg.n * seg.l * 4 {
            return Err(LosError::SegmentShape { expected: self.config.n, paths: self.config.l, found_points: seg.n });
        }
        if seg.values.iter().any(|v| !v.is_finite()) {
            return Err(LosError::NonFinite);
        }
        Ok(())
    }

    /// Conv stack plus linear layer for one point.
    pub fn point_features(&self, x: &[f64]) -> Result<(Vec<f64>, PointCache), NnError> {
        let l = self.config.l;
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let z = conv.forward(inputs.last().unwrap(), l)?;
            inputs.push(relu(&z));
            pre.push(z);
        }
        let feat = self.linear.forward(inputs.last().unwrap())?;
        Ok((feat, PointCache { inputs, pre }))
    }

    /// Backward through the extractor of one point; input gradient discarded.
    fn point_backward(&self, cache: &PointCache, dfeat: &[f64], grad: &mut LosEstNet) {
        let l = self.config.l;
        let mut d = self.linear.backward(cache.inputs.last().unwrap(), dfeat, &mut grad.linear);
        for k in (0..self.convs.len()).rev() {
            let dz = relu_backward(&cache.pre[k], &d);
            d = self.convs[k].backward(&cache.inputs[k], l, &dz, &mut grad.convs[k]);
        }
    }

    /// The `N x 3` feature sequence fed to the BiLSTM.
    pub fn features(&self, seg: &SegmentTensor) -> Result<Vec<Vec<f64>>, LosError> {
        self.check(seg)?;
        (0..seg.n).map(|i| Ok(self.point_features(seg.point(i))?.0)).collect()
    }

    /// Per-position `(sin, cos)` and recorded activations.
    pub fn forward_recorded(&self, seg: &SegmentTensor, tape: &mut Tape<LosEstCache>) -> Result<Vec<[f64; 2]>, LosError> {
        self.check(seg)?;
        let mut feats = Vec::with_capacity(seg.n);
        let mut points = Vec::with_capacity(seg.n);
        for i in 0..seg.n {
            let (f, c) = self.point_features(seg.point(i))?;
            feats.push(f);
            points.push(c);
        }
        let (hidden, bilstm) = self.bilstm.forward(&feats)?;
        let mut out = Vec::with_capacity(seg.n);
        for h in &hidden {
            let y = self.head.forward(h)?;
            if !(y[0].is_finite() && y[1].is_finite()) {
                return Err(LosError::NonFinite);
            }
            out.push([y[0], y[1]]);
        }
        tape.record(LosEstCache { points, bilstm, hidden });
        Ok(out)
    }

    pub fn forward(&self, seg: &SegmentTensor) -> Result<Vec<[f64; 2]>, LosError> {
        self.forward_recorded(seg, &mut Tape::new())
    }

    /// Accumulates parameter gradients for upstream gradients `douts` on the
    /// per-position outputs.
    pub fn backward(&self, tape: &mut Tape<LosEstCache>, douts: &[[f64; 2]], grad: &mut LosEstNet) -> Result<(), NnError> {
        let cache = tape.take()?;
        let dh: Vec<Vec<f64>> =
            cache.hidden.iter().zip(douts).map(|(h, d)| self.head.backward(h, d, &mut grad.head)).collect();
        let dfeats = self.bilstm.backward_pass(&cache.bilstm, &dh, &mut grad.bilstm);
        for (pc, df) in cache.points.iter().zip(&dfeats) {
            self.point_backward(pc, df, grad);
        }
        Ok(())
    }

    /// Estimate for the middle point.
    pub fn estimate(&self, seg: &SegmentTensor) -> Result<AoaEstimate, LosError> {
        let out = self.forward(seg)?;
        let mid = middle_index(seg.n);
        Ok(AoaEstimate::from_sin_cos(out[mid][0], out[mid][1], mid))
    }

    pub fn to_checkpoint(&self, metadata: TrainingMetadata, delay_scale: f64) -> ModelCheckpoint {
        let mut ck = ModelCheckpoint::from_parameters(
            LOSEST_KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            self,
            metadata,
        );
        ck.extra = serde_json::json!({ "gain_normalization": "segment-max", "delay_scale": delay_scale });
        ck
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, NnError> {
        ck.expect_kind(LOSEST_KIND)?;
        let config: LosEstConfig =
            serde_json::from_value(ck.architecture.clone()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut net = LosEstNet::new(config, 0);
        ck.load_into(&mut net)?;
        Ok(net)
    }
}

/// Loss shared by training and validation: mean squared error of
/// `(sin, cos)` over all positions.
fn sin_cos_loss(out: &[[f64; 2]], labels: &[f64]) -> (f64, Vec<[f64; 2]>) {
    let scale = 1.0 / (2 * out.len()) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(out.len());
    for (o, &t) in out.iter().zip(labels) {
        let (es, ec) = (o[0] - t.sin(), o[1] - t.cos());
        loss += scale * (es * es + ec * ec);
        grads.push([2.0 * scale * es, 2.0 * scale * ec]);
    }
    (loss, grads)
}

impl Parameters for LosEstNet {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (k, c) in self.convs.iter().enumerate() {
            v.extend(c.tensors().into_iter().map(|(n, t)| (format!("conv{k}.{n}"), t)));
        }
        v.extend(self.linear.tensors().into_iter().map(|(n, t)| (format!("linear.{n}"), t)));
        v.extend(self.bilstm.tensors().into_iter().map(|(n, t)| (format!("bilstm.{n}"), t)));
        v.extend(self.head.tensors().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for c in self.convs.iter_mut() {
            v.extend(c.tensors_mut());
        }
        v.extend(self.linear.tensors_mut());
        v.extend(self.bilstm.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

impl Trainable for LosEstNet {
    type Sample = Segment;

    fn loss(&self, s: &Segment) -> Result<f64, NnError> {
        let out = self.forward(&s.input).map_err(to_nn)?;
        Ok(sin_cos_loss(&out, &s.labels).0)
    }

    fn accumulate_gradient(&self, s: &Segment, grad: &mut Self) -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let out = self.forward_recorded(&s.input, &mut tape).map_err(to_nn)?;
        let (loss, d) = sin_cos_loss(&out, &s.labels);
        self.backward(&mut tape, &d, grad)?;
        Ok(loss)
    }
}

fn to_nn(e: LosError) -> NnError {
    match e {
        LosError::Nn(e) => e,
        other => NnError::NonFinite(other.to_string()),
    }
}

pub fn train_losest(
    segments: &[Segment],
    config: LosEstConfig,
    train: &TrainConfig,
) -> Result<(LosEstNet, TrainingMetadata), LosError> {
    if segments.is_empty() {
        return Err(LosError::EmptyDataset { total: 0, criterion1: 0, criterion2: 0 });
    }
    let net = LosEstNet::new(config, train.seed);
    Ok(fit(net, segments, train)?)
}

/// Single-snapshot fully connected baseline: `4L -> H -> H -> 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcNet {
    pub l: usize,
    pub layers: Vec<Linear>,
}

/// One encoded snapshot and its true bearing.
#[derive(Debug, Clone, PartialEq)]
pub struct FcSample {
    pub input: Vec<f64>,
    pub label: f64,
}

impl FcSample {
    /// The middle point of `seg`, re-encoded on its own.
    pub fn from_params(params: &ChannelParamSet, label: f64, delay_scale: f64) -> Result<Self, LosError> {
        let t = encode_segment(std::slice::from_ref(params), delay_scale)?;
        Ok(Self { input: t.values, label })
    }
}

impl FcNet {
    pub fn new(l: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            Linear::new(4 * l, hidden, &mut rng),
            Linear::new(hidden, hidden, &mut rng),
            Linear::new(hidden, 2, &mut rng),
        ];
        Self { l, layers }
    }

    fn run(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>), NnError> {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::new();
        for layer in &self.layers[..self.layers.len() - 1] {
            let z = layer.forward(inputs.last().unwrap())?;
            inputs.push(relu(&z));
            pre.push(z);
        }
        let y = self.layers.last().unwrap().forward(inputs.last().unwrap())?;
        Ok((inputs, pre, y))
    }

    pub fn estimate(&self, x: &[f64]) -> Result<AoaEstimate, LosError> {
        let (_, _, y) = self.run(x)?;
        if !(y[0].is_finite() && y[1].is_finite()) {
            return Err(LosError::NonFinite);
        }
        Ok(AoaEstimate::from_sin_cos(y[0], y[1], 0))
    }

    pub fn to_checkpoint(&self, metadata: TrainingMetadata, delay_scale: f64) -> ModelCheckpoint {
        let hidden = self.layers[0].output_dim();
        let mut ck =
            ModelCheckpoint::from_parameters(FC_KIND, serde_json::json!({ "l": self.l, "hidden": hidden }), self, metadata);
        ck.extra = serde_json::json!({ "gain_normalization": "snapshot-max", "delay_scale": delay_scale });
        ck
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, NnError> {
        ck.expect_kind(FC_KIND)?;
        let field = |k: &str| {
            ck.architecture.get(k).and_then(|v| v.as_u64()).ok_or_else(|| NnError::Checkpoint(format!("missing `{k}`")))
        };
        let mut net = FcNet::new(field("l")? as usize, field("hidden")? as usize, 0);
        ck.load_into(&mut net)?;
        Ok(net)
    }
}

impl Parameters for FcNet {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| l.tensors().into_iter().map(move |(n, t)| (format!("fc{k}.{n}"), t)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

impl Trainable for FcNet {
    type Sample = FcSample;

    fn loss(&self, s: &FcSample) -> Result<f64, NnError> {
        let (_, _, y) = self.run(&s.input)?;
        Ok(sin_cos_loss(&[[y[0], y[1]]], &[s.label]).0)
    }

    fn accumulate_gradient(&self, s: &FcSample, grad: &mut Self) -> Result<f64, NnError> {
        let (inputs, pre, y) = self.run(&s.input)?;
        let (loss, d) = sin_cos_loss(&[[y[0], y[1]]], &[s.label]);
        let last = self.layers.len() - 1;
        let mut dx = self.layers[last].backward(&inputs[last], &d[0], &mut grad.layers[last]);
        for k in (0..last).rev() {
            let dz = relu_backward(&pre[k], &dx);
            dx = self.layers[k].backward(&inputs[k], &dz, &mut grad.layers[k]);
        }
        Ok(loss)
    }
}

pub fn train_fc(
    samples: &[FcSample],
    l: usize,
    hidden: usize,
    train: &TrainConfig,
) -> Result<(FcNet, TrainingMetadata), LosError> {
    if samples.is_empty() {
        return Err(LosError::EmptyDataset { total: 0, criterion1: 0, criterion2: 0 });
    }
    Ok(fit(FcNet::new(l, hidden, train.seed), samples, train)?)
}
