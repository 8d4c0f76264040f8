//! Stage computations, independent of the on-disk layout.

use locnet_core::anodet::{calibrate_labelled, extract_features, keeps, train_on_features, AnoDetNet, Calibration, FeatureSequence};
use locnet_core::geometry::wrap_two_pi;
use locnet_core::locate::{admit, localize, Bearing, GatedBearing, Localization, LocateError};
use locnet_core::losest::{
    build_dataset, near_oracle, rss_baseline, segments_of, toa_baseline, train_fc, train_losest, DatasetStats, FcNet,
    FcSample, LosEstNet, Segment,
};
use locnet_core::nn::TrainingMetadata;
use locnet_core::nomp::Extractor;
use locnet_core::observation::{PointObservation, TrajectoryObservation};
use locnet_core::sim::{
    generate_trajectory, los_bearing, synthesize_cfr, trace_paths, CfrSnapshot, Scene, Trajectory, TrajectorySpec,
    TruePathSet,
};
use locnet_core::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::eval::Method;
use crate::scenario::{mix_seed, plan, stage_seed, Job, Split};
use crate::HarnessError;

/// Walks redrawn when a point receives no path at all.
const WALK_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub index: usize,
    pub position: Point2,
    pub orientation: f64,
    pub true_los_aoa: f64,
    /// The unobstructed direct path reached the array.
    pub los_received: bool,
    pub cfr: CfrSnapshot,
    /// Ground-truth paths with delays relative to the earliest arrival.
    pub true_paths: TruePathSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: u64,
    pub scenario: String,
    pub split: Split,
    pub device: String,
    pub device_position: Point2,
    pub num_subcarriers: usize,
    pub clock_offset_samples: f64,
    pub snapshots: Vec<SnapshotRecord>,
}

fn walk_spec(config: &RunConfig, job: &Job) -> TrajectorySpec {
    let mut spec = TrajectorySpec::new(config.sim.trajectory_length, config.sim.step, job.region);
    spec.orientation = config.sim.orientation_policy();
    if job.split == Split::Localize {
        spec.length = config.locate.trajectory_length;
        spec.turn_probability = config.locate.turn_probability;
    }
    spec
}

fn device_of(scene: &Scene, job: &Job) -> Result<Point2, HarnessError> {
    scene
        .device(&job.device)
        .map(|d| d.position)
        .ok_or_else(|| HarnessError::Config(format!("scene has no device `{}`", job.device)))
}

fn draw_walk(scene: &Scene, config: &RunConfig, job: &Job, rng: &mut ChaCha8Rng) -> Result<Trajectory, HarnessError> {
    let device = device_of(scene, job)?;
    Ok(generate_trajectory(scene, device, &walk_spec(config, job), rng.random())?)
}

fn synthesize(
    scene: &Scene,
    config: &RunConfig,
    job: &Job,
    walk: &Trajectory,
    rng: &mut ChaCha8Rng,
) -> Result<Option<TrajectoryRecord>, HarnessError> {
    let ofdm = config.profile.ofdm();
    let array = config.sim.array_config();
    let [lo, hi] = config.sim.clock_offset_samples;
    let offset = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let mut snapshots = Vec::with_capacity(walk.len());
    for i in 0..walk.len() {
        let pose = walk.pose(i);
        let traced = trace_paths(
            scene,
            walk.device_position,
            pose,
            &array,
            ofdm.carrier_frequency,
            config.sim.max_reflections,
        )?;
        if traced.is_empty() {
            return Ok(None);
        }
        let paths = traced.relative_to_earliest(offset * ofdm.sample_interval());
        let mut cfr = synthesize_cfr(&paths, &ofdm, &array, config.sim.snr_db, rng.random())?;
        cfr.timestamp_index = i;
        snapshots.push(SnapshotRecord {
            index: i,
            position: pose.position,
            orientation: pose.orientation,
            true_los_aoa: los_bearing(walk.device_position, pose.position),
            los_received: paths.los().is_some(),
            cfr,
            true_paths: paths,
        });
    }
    Ok(Some(TrajectoryRecord {
        id: job.id,
        scenario: job.scenario.clone(),
        split: job.split,
        device: job.device.clone(),
        device_position: walk.device_position,
        num_subcarriers: ofdm.num_subcarriers,
        clock_offset_samples: offset,
        snapshots,
    }))
}

/// Simulates one trajectory; the walk is redrawn if some point sees no path.
pub fn simulate_job(scene: &Scene, config: &RunConfig, job: &Job, seed: u64) -> Result<TrajectoryRecord, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, job.id));
    for _ in 0..WALK_RETRIES {
        let walk = draw_walk(scene, config, job, &mut rng)?;
        if let Some(rec) = synthesize(scene, config, job, &walk, &mut rng)? {
            return Ok(rec);
        }
    }
    Err(HarnessError::Config(format!(
        "trajectory {} ({}): no propagation path reaches the array after {WALK_RETRIES} walks",
        job.id, job.scenario
    )))
}

/// Whether a walk's exact bearings satisfy the admission rules.
pub fn geometrically_admissible(walk: &Trajectory, config: &RunConfig) -> bool {
    let n = config.network.n;
    let half = n / 2;
    if walk.len() < n {
        return false;
    }
    let bearings: Vec<Bearing> =
        (half..walk.len() - half).map(|i| Bearing::towards(walk.points[i], walk.device_position)).collect();
    admit(&bearings, &config.locate.rules()).admitted
}

fn simulate_localize(scene: &Scene, config: &RunConfig, seed: u64) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    let jobs = plan(config, scene, Split::Localize)?;
    let walks: Vec<(usize, bool)> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, job)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, job.id));
            Ok((k, geometrically_admissible(&draw_walk(scene, config, job, &mut rng)?, config)))
        })
        .collect::<Result<_, HarnessError>>()?;
    let chosen: Vec<&Job> =
        walks.iter().filter(|(_, ok)| *ok).take(config.locate.trajectories).map(|&(k, _)| &jobs[k]).collect();
    chosen.par_iter().map(|job| simulate_job(scene, config, job, seed)).collect()
}

/// Simulates every trajectory of a split, in plan order.
pub fn simulate(scene: &Scene, config: &RunConfig, split: Split) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    let seed = stage_seed(config.seed, &format!("simulate-{}", split.name()));
    if split == Split::Localize {
        return simulate_localize(scene, config, seed);
    }
    let jobs = plan(config, scene, split)?;
    jobs.par_iter().map(|job| simulate_job(scene, config, job, seed)).collect()
}

/// Path extraction for every snapshot, angles rotated into the world frame.
pub fn extract(records: &[TrajectoryRecord], config: &RunConfig) -> Vec<TrajectoryObservation> {
    let array = config.sim.array_config();
    let mut extractors: Vec<(usize, Extractor)> = Vec::new();
    for r in records {
        if !extractors.iter().any(|(n, _)| *n == r.num_subcarriers) {
            extractors.push((r.num_subcarriers, Extractor::new(&array, r.num_subcarriers, config.extract.nomp())));
        }
    }
    let l = config.extract.num_paths;
    records
        .par_iter()
        .map(|r| {
            let ex = &extractors.iter().find(|(n, _)| *n == r.num_subcarriers).expect("extractor").1;
            TrajectoryObservation {
                id: r.id,
                scenario: r.scenario.clone(),
                device: r.device_position,
                num_subcarriers: r.num_subcarriers,
                points: r
                    .snapshots
                    .iter()
                    .map(|s| PointObservation {
                        index: s.index,
                        position: s.position,
                        orientation: s.orientation,
                        true_los_aoa: s.true_los_aoa,
                        los_received: s.los_received,
                        params: ex.extract_paths(&s.cfr, l).params.rotated(s.orientation),
                    })
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LosTraining {
    pub losest: LosEstNet,
    pub losest_meta: TrainingMetadata,
    pub fc: FcNet,
    pub fc_meta: TrainingMetadata,
    pub stats: DatasetStats,
}

/// Segments of the training corpus that satisfy both training criteria.
pub fn training_segments(train: &[TrajectoryObservation], config: &RunConfig) -> Result<(Vec<Segment>, DatasetStats), HarnessError> {
    Ok(build_dataset(train, config.network.n, &config.gate.criteria())?)
}

/// Trains LoSEstNet on the filtered segments and the FC baseline on the
/// snapshots that satisfy both criteria individually.
pub fn train_los(train: &[TrajectoryObservation], config: &RunConfig) -> Result<LosTraining, HarnessError> {
    let (segments, stats) = training_segments(train, config)?;
    let tc = config.train.train_config(stage_seed(config.seed, "train-los"));
    let (losest, losest_meta) = train_losest(&segments, config.losest_config(), &tc)?;
    let criteria = config.gate.criteria();
    let samples: Vec<FcSample> = train
        .iter()
        .flat_map(|t| t.points.iter().map(move |p| (t.num_subcarriers, p)))
        .filter(|(_, p)| criteria.los_extracted(p) && criteria.strong_enough(p))
        .map(|(nc, p)| FcSample::from_params(&p.params, p.true_los_aoa, nc as f64))
        .collect::<Result<_, _>>()?;
    let fc_tc = config.train.train_config(stage_seed(config.seed, "train-fc"));
    let (fc, fc_meta) = train_fc(&samples, config.extract.num_paths, config.network.fc_hidden, &fc_tc)?;
    Ok(LosTraining { losest, losest_meta, fc, fc_meta, stats })
}

/// Trains AnoDetNet on the same normal segments as LoSEstNet.
pub fn train_ad(
    losest: &LosEstNet,
    train: &[TrajectoryObservation],
    config: &RunConfig,
) -> Result<(AnoDetNet, TrainingMetadata), HarnessError> {
    let (segments, _) = training_segments(train, config)?;
    let feats: Vec<FeatureSequence> =
        segments.par_iter().map(|s| extract_features(losest, &s.input)).collect::<Result<_, _>>()?;
    let tc = config.train.train_config(stage_seed(config.seed, "train-ad"));
    Ok(train_on_features(&feats, config.ad_config(), &tc)?)
}

/// `(reconstruction error, LoSEstNet midpoint error in degrees)` per segment.
pub fn calibration_records(
    losest: &LosEstNet,
    adnet: &AnoDetNet,
    obs: &[TrajectoryObservation],
    config: &RunConfig,
) -> Result<Vec<(f64, f64)>, HarnessError> {
    let n = config.network.n;
    let per_traj: Vec<Vec<(f64, f64)>> = obs
        .par_iter()
        .map(|t| {
            segments_of(t, n)
                .iter()
                .map(|seg| {
                    let est = losest.estimate(&seg.input)?;
                    let e = adnet.error(&extract_features(losest, &seg.input)?)?;
                    Ok((e, est.error_deg(seg.mid_label())))
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_traj.into_iter().flatten().collect())
}

pub fn calibrate(
    losest: &LosEstNet,
    adnet: &AnoDetNet,
    obs: &[TrajectoryObservation],
    config: &RunConfig,
) -> Result<(Calibration, Vec<(f64, f64)>), HarnessError> {
    let records = calibration_records(losest, adnet, obs, config)?;
    Ok((calibrate_labelled(&records, config.gate.label_error_deg)?, records))
}

/// Whatever trained models are available to the evaluation.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub losest: Option<LosEstNet>,
    pub fc: Option<FcNet>,
    pub adnet: Option<(AnoDetNet, f64)>,
}

/// Every method's bearing for the middle point of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEval {
    pub index: usize,
    pub position: Point2,
    pub true_aoa: f64,
    pub rss: f64,
    pub toa: f64,
    pub near: f64,
    pub fc: Option<f64>,
    pub losest: Option<f64>,
    pub recon_error: Option<f64>,
    pub kept: Option<bool>,
}

impl PointEval {
    /// The method's bearing, `None` when unavailable or discarded by the gate.
    pub fn estimate(&self, method: Method) -> Option<f64> {
        match method {
            Method::Rss => Some(self.rss),
            Method::Toa => Some(self.toa),
            Method::Near => Some(self.near),
            Method::Fc => self.fc,
            Method::Losest => self.losest,
            Method::AdLosest => self.losest.filter(|_| self.kept == Some(true)),
        }
    }

    pub fn error_deg(&self, method: Method) -> Option<f64> {
        self.estimate(method).map(|a| locnet_core::geometry::angle_diff(a, self.true_aoa).abs().to_degrees())
    }

    /// Whether the method produced anything at this point (before gating).
    pub fn available(&self, method: Method) -> bool {
        match method {
            Method::AdLosest => self.kept.is_some() && self.losest.is_some(),
            m => self.estimate(m).is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    pub id: u64,
    pub scenario: String,
    pub device_position: Point2,
    pub points: Vec<PointEval>,
}

fn evaluate_one(t: &TrajectoryObservation, models: &Models, n: usize) -> Result<TrajectoryEval, HarnessError> {
    let mut points = Vec::new();
    for seg in segments_of(t, n) {
        let p = &t.points[seg.mid_point()];
        let fc = match &models.fc {
            Some(fc) => Some(fc.estimate(&FcSample::from_params(&p.params, 0.0, t.num_subcarriers as f64)?.input)?.angle),
            None => None,
        };
        let losest = match &models.losest {
            Some(net) => Some(net.estimate(&seg.input)?.angle),
            None => None,
        };
        let (recon_error, kept) = match (&models.losest, &models.adnet) {
            (Some(net), Some((ad, threshold))) => {
                let e = ad.error(&extract_features(net, &seg.input)?)?;
                (Some(e), Some(keeps(e, *threshold)))
            }
            _ => (None, None),
        };
        points.push(PointEval {
            index: p.index,
            position: p.position,
            true_aoa: p.true_los_aoa,
            rss: wrap_two_pi(rss_baseline(&p.params)?.angle),
            toa: wrap_two_pi(toa_baseline(&p.params)?.angle),
            near: wrap_two_pi(near_oracle(&p.params, p.true_los_aoa)?.angle),
            fc: fc.map(wrap_two_pi),
            losest: losest.map(wrap_two_pi),
            recon_error,
            kept,
        });
    }
    Ok(TrajectoryEval { id: t.id, scenario: t.scenario.clone(), device_position: t.device, points })
}

/// Per-point estimates of every available method, in input order.
pub fn evaluate(obs: &[TrajectoryObservation], models: &Models, config: &RunConfig) -> Result<Vec<TrajectoryEval>, HarnessError> {
    obs.par_iter().map(|t| evaluate_one(t, models, config.network.n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub trajectory_id: u64,
    pub scenario: String,
    pub method: Method,
    pub device: Point2,
    pub estimate: Option<Point2>,
    pub error_m: Option<f64>,
    pub kept: usize,
    pub total: usize,
    pub rho: f64,
    pub failure: Option<String>,
}

/// Bearing intersection for one trajectory and method.
pub fn localize_one(t: &TrajectoryEval, method: Method, config: &RunConfig) -> LocalizationRecord {
    let points: Vec<GatedBearing> = t
        .points
        .iter()
        .filter(|p| p.available(method))
        .map(|p| GatedBearing {
            bearing: Bearing::new(p.position, p.estimate(method).unwrap_or_else(|| p.losest.unwrap_or(0.0))),
            kept: p.estimate(method).is_some(),
        })
        .collect();
    let result: Result<Localization, LocateError> = localize(&points, &config.locate.rules(), config.locate.row_form());
    let kept = points.iter().filter(|p| p.kept).count();
    let total = points.len();
    let base = LocalizationRecord {
        trajectory_id: t.id,
        scenario: t.scenario.clone(),
        method,
        device: t.device_position,
        estimate: None,
        error_m: None,
        kept,
        total,
        rho: if total == 0 { 0.0 } else { kept as f64 / total as f64 },
        failure: None,
    };
    match result {
        Ok(loc) => LocalizationRecord {
            estimate: Some(loc.estimate),
            error_m: Some(loc.estimate.distance(t.device_position)),
            ..base
        },
        Err(e) => LocalizationRecord { failure: Some(e.to_string()), ..base },
    }
}

pub fn localize_all(evals: &[TrajectoryEval], methods: &[Method], config: &RunConfig) -> Vec<LocalizationRecord> {
    methods.iter().flat_map(|&m| evals.iter().map(move |t| localize_one(t, m, config))).collect()
}
