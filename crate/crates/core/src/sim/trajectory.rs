//! Smartphone walks on the floor grid.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::propagation::RxPose;
use super::scene::{Region, Scene};
use super::SimError;
use crate::geometry::{Point2, Segment};

/// How the handset's array is rotated along a walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "angle")]
pub enum OrientationPolicy {
    /// Same rotation (radians) at every point of every walk.
    Fixed(f64),
    /// One uniformly random rotation per walk.
    PerTrajectory,
    /// Independent uniformly random rotation at every point.
    PerPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub length: usize,
    pub step: f64,
    pub region: Region,
    pub orientation: OrientationPolicy,
    /// Probability of turning 90 degrees at each step.
    pub turn_probability: f64,
    /// Points closer than this to the device are not visited.
    pub min_device_distance: f64,
    pub min_wall_clearance: f64,
}

impl TrajectorySpec {
    pub fn new(length: usize, step: f64, region: Region) -> Self {
        Self {
            length,
            step,
            region,
            orientation: OrientationPolicy::Fixed(0.0),
            turn_probability: 0.25,
            min_device_distance: 0.6,
            min_wall_clearance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Point2>,
    /// Array-frame rotation at each point, radians.
    pub orientations: Vec<f64>,
    pub step: f64,
    pub device_position: Point2,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn pose(&self, i: usize) -> RxPose {
        RxPose::new(self.points[i], self.orientations[i])
    }
}

const DIRECTIONS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Persistent self-avoiding random walk on a grid of pitch `spec.step`
/// inside `spec.region`, never crossing a wall.
pub fn generate_trajectory(
    scene: &Scene,
    device: Point2,
    spec: &TrajectorySpec,
    rng_seed: u64,
) -> Result<Trajectory, SimError> {
    if !(spec.step > 0.0) || spec.length == 0 {
        return Err(SimError::InvalidConfig("trajectory needs positive step and length".into()));
    }
    let nx = (spec.region.width() / spec.step).floor() as i64;
    let ny = (spec.region.height() / spec.step).floor() as i64;
    if nx <= 0 || ny <= 0 || ((nx * ny) as usize) < spec.length {
        return Err(SimError::TrajectoryDoesNotFit { length: spec.length, step: spec.step });
    }
    let origin = spec.region.min;
    let at = |ix: i64, iy: i64| {
        Point2::new(origin.x + spec.step * (ix as f64 + 0.5), origin.y + spec.step * (iy as f64 + 0.5))
    };
    let usable = |p: Point2| {
        spec.region.contains(p)
            && p.distance(device) >= spec.min_device_distance
            && scene
                .walls
                .iter()
                .all(|w| w.segment.distance_to_point(p) >= spec.min_wall_clearance)
    };
    let cells: Vec<(i64, i64)> = (0..nx)
        .flat_map(|ix| (0..ny).map(move |iy| (ix, iy)))
        .filter(|&(ix, iy)| usable(at(ix, iy)))
        .collect();
    if cells.len() < spec.length {
        return Err(SimError::TrajectoryDoesNotFit { length: spec.length, step: spec.step });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _attempt in 0..500 {
        let start = cells[rng.random_range(0..cells.len())];
        let mut walk = vec![start];
        let mut heading = rng.random_range(0..4usize);
        while walk.len() < spec.length {
            let (cx, cy) = *walk.last().unwrap();
            let mut options: Vec<usize> = vec![heading, (heading + 1) % 4, (heading + 3) % 4];
            if rng.random::<f64>() < spec.turn_probability {
                options[1..].shuffle(&mut rng);
                options.rotate_left(1);
            } else {
                options[1..].shuffle(&mut rng);
            }
            let next = options.into_iter().find_map(|d| {
                let (dx, dy) = DIRECTIONS[d];
                let cand = (cx + dx, cy + dy);
                if cand.0 < 0 || cand.1 < 0 || cand.0 >= nx || cand.1 >= ny || walk.contains(&cand) {
                    return None;
                }
                let p = at(cand.0, cand.1);
                let leg = Segment::new(at(cx, cy), p);
                let crosses = scene.walls.iter().any(|w| leg.crosses(&w.segment, 0.0));
                (usable(p) && !crosses).then_some((d, cand))
            });
            match next {
                Some((d, cand)) => {
                    heading = d;
                    walk.push(cand);
                }
                None => break,
            }
        }
        if walk.len() == spec.length {
            let points: Vec<Point2> = walk.iter().map(|&(ix, iy)| at(ix, iy)).collect();
            let orientations = match spec.orientation {
                OrientationPolicy::Fixed(a) => vec![a; points.len()],
                OrientationPolicy::PerTrajectory => vec![rng.random_range(-PI..PI); points.len()],
                OrientationPolicy::PerPoint => (0..points.len()).map(|_| rng.random_range(-PI..PI)).collect(),
            };
            return Ok(Trajectory { points, orientations, step: spec.step, device_position: device });
        }
    }
    Err(SimError::TrajectoryDoesNotFit { length: spec.length, step: spec.step })
}
