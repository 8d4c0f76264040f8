//! Scene loading and the list of trajectories each stage works through.

use std::path::Path;

use locnet_core::sim::{Region, Scene};
use locnet_core::Point2;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::HarnessError;

pub const BUILTIN_OFFICE: &str = include_str!("../scenes/office.scene");

/// Resolves `builtin:office` or a path to a scene file.
pub fn load_scene(spec: &str) -> Result<Scene, HarnessError> {
    let text = match spec {
        "builtin:office" => BUILTIN_OFFICE.to_string(),
        path => std::fs::read_to_string(Path::new(path))
            .map_err(|e| HarnessError::Config(format!("cannot read scene file {path}: {e}")))?,
    };
    Ok(Scene::parse(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Calibrate,
    Eval,
    Localize,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Calibrate, Split::Eval, Split::Localize];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calibrate => "calibrate",
            Split::Eval => "eval",
            Split::Localize => "localize",
        }
    }

    fn id_base(self) -> u64 {
        (self as u64) << 32
    }
}

/// One trajectory to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub scenario: String,
    pub split: Split,
    pub device: String,
    pub region: Region,
}

/// SplitMix64 finalizer, used to derive independent seeds from one root.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of a named stage, derived from the run seed.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let tag = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    mix_seed(root, tag)
}

fn region_named(scene: &Scene, name: &str) -> Result<Region, HarnessError> {
    scene.region(name).ok_or_else(|| HarnessError::Config(format!("scene has no region `{name}`")))
}

fn device_position(scene: &Scene, name: &str) -> Result<Point2, HarnessError> {
    scene
        .device(name)
        .map(|d| d.position)
        .ok_or_else(|| HarnessError::Config(format!("scene has no device `{name}`")))
}

/// Square of half-width `radius` around `center`, clipped to the scene.
pub fn area_around(scene: &Scene, center: Point2, radius: f64) -> Result<Region, HarnessError> {
    let b = scene.bounds().ok_or_else(|| HarnessError::Config("scene is empty".into()))?;
    let inset = 0.3;
    Ok(Region {
        min: Point2::new((center.x - radius).max(b.min.x + inset), (center.y - radius).max(b.min.y + inset)),
        max: Point2::new((center.x + radius).min(b.max.x - inset), (center.y + radius).min(b.max.y - inset)),
    })
}

fn intersect(a: Region, b: Region) -> Option<Region> {
    let r = Region {
        min: Point2::new(a.min.x.max(b.min.x), a.min.y.max(b.min.y)),
        max: Point2::new(a.max.x.min(b.max.x), a.max.y.min(b.max.y)),
    };
    (r.width() > 0.0 && r.height() > 0.0).then_some(r)
}

/// Scenario trajectories of one split, devices taken round-robin.
pub fn plan(config: &RunConfig, scene: &Scene, split: Split) -> Result<Vec<Job>, HarnessError> {
    let mut jobs = Vec::new();
    if split == Split::Localize {
        let budget = if config.locate.trajectories == 0 { 0 } else { config.locate.max_candidates };
        let devices = &config.locate.devices;
        if devices.is_empty() && budget > 0 {
            return Err(HarnessError::Config("locate.devices is empty".into()));
        }
        for k in 0..budget {
            let device = &devices[k % devices.len()];
            let region = area_around(scene, device_position(scene, device)?, config.locate.radius)?;
            jobs.push(Job { id: split.id_base() + k as u64, scenario: format!("locate-{device}"), split, device: device.clone(), region });
        }
        return Ok(jobs);
    }
    for spec in &config.scenarios {
        let (devices, count) = match split {
            Split::Train => (&spec.train_devices, spec.train_trajectories),
            Split::Calibrate => (&spec.train_devices, spec.calibration_trajectories),
            Split::Eval => (&spec.eval_devices, spec.eval_trajectories),
            Split::Localize => unreachable!(),
        };
        if count == 0 {
            continue;
        }
        if devices.is_empty() {
            return Err(HarnessError::Config(format!("scenario `{}` has no {} devices", spec.name, split.name())));
        }
        let named = region_named(scene, &spec.region)?;
        for k in 0..count {
            let device = &devices[k % devices.len()];
            let region = match spec.radius {
                Some(r) => intersect(named, area_around(scene, device_position(scene, device)?, r)?).ok_or_else(|| {
                    HarnessError::Config(format!(
                        "scenario `{}`: region `{}` lies outside {r} m of device `{device}`",
                        spec.name, spec.region
                    ))
                })?,
                None => {
                    device_position(scene, device)?;
                    named
                }
            };
            jobs.push(Job {
                id: split.id_base() + jobs.len() as u64,
                scenario: spec.name.clone(),
                split,
                device: device.clone(),
                region,
            });
        }
    }
    Ok(jobs)
}
