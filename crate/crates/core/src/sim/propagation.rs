//! Image-method multipath tracer (up to second-order specular reflections).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::{ArrayConfig, SPEED_OF_LIGHT};
use super::scene::Scene;
use super::SimError;
use crate::geometry::{wrap_two_pi, Point2, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    LoS,
    Reflected,
    Penetrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePath {
    pub gain: Complex64,
    /// Propagation delay, seconds.
    pub delay: f64,
    /// Arrival direction in the array frame, `[0, 2pi)`.
    pub aoa: f64,
    /// Arrival direction in the world frame, `[0, 2pi)`.
    pub aoa_world: f64,
    pub kind: PathKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruePathSet {
    pub paths: Vec<TruePath>,
}

impl TruePathSet {
    pub fn los(&self) -> Option<&TruePath> {
        self.paths.iter().find(|p| p.kind == PathKind::LoS)
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn earliest_delay(&self) -> Option<f64> {
        self.paths.iter().map(|p| p.delay).min_by(f64::total_cmp)
    }

    /// Re-references delays to the earliest arrival plus a receiver clock
    /// offset (seconds). Transmitter and receiver share no clock, so only
    /// relative delays are observable.
    pub fn relative_to_earliest(&self, clock_offset: f64) -> TruePathSet {
        let t0 = self.earliest_delay().unwrap_or(0.0);
        TruePathSet {
            paths: self
                .paths
                .iter()
                .map(|p| TruePath { delay: p.delay - t0 + clock_offset, ..p.clone() })
                .collect(),
        }
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }
}

/// Receiver placement: position plus rotation of the array frame relative to
/// the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RxPose {
    pub position: Point2,
    pub orientation: f64,
}

impl RxPose {
    pub fn new(position: Point2, orientation: f64) -> Self {
        Self { position, orientation }
    }

    pub fn to_array_frame(&self, world_angle: f64) -> f64 {
        wrap_two_pi(world_angle - self.orientation)
    }

    pub fn to_world_frame(&self, array_angle: f64) -> f64 {
        wrap_two_pi(array_angle + self.orientation)
    }
}

/// Free-space amplitude gain `lambda / (4 pi d)`.
pub fn free_space_amplitude(distance: f64, wavelength: f64) -> f64 {
    wavelength / (4.0 * PI * distance)
}

struct Candidate {
    /// Vertices from transmitter to receiver.
    vertices: Vec<Point2>,
    /// Wall index hit at each interior vertex.
    bounces: Vec<usize>,
}

/// Enumerates propagation paths from `tx` to the receiver by the image method.
pub fn trace_paths(
    scene: &Scene,
    tx: Point2,
    rx: RxPose,
    array: &ArrayConfig,
    carrier_frequency: f64,
    max_reflections: usize,
) -> Result<TruePathSet, SimError> {
    if max_reflections > 2 {
        return Err(SimError::UnsupportedReflectionOrder(max_reflections));
    }
    if tx.distance(rx.position) < 1e-9 {
        return Err(SimError::CoincidentEndpoints);
    }
    let wavelength = SPEED_OF_LIGHT / carrier_frequency;
    let rxp = rx.position;
    let direct_len = tx.distance(rxp);

    let mut candidates = vec![Candidate { vertices: vec![tx, rxp], bounces: vec![] }];
    let margin = 1e-9;
    if max_reflections >= 1 {
        for (i, w) in scene.walls.iter().enumerate() {
            let image = w.segment.mirror(tx);
            let ray = Segment::new(image, rxp);
            if let Some((t, u)) = ray.crossing_params(&w.segment) {
                if t > margin && t < 1.0 - margin && u > margin && u < 1.0 - margin {
                    let p = image + (rxp - image) * t;
                    if same_side(&w.segment, tx, rxp) {
                        candidates.push(Candidate { vertices: vec![tx, p, rxp], bounces: vec![i] });
                    }
                }
            }
        }
    }
    if max_reflections >= 2 {
        for (i, w1) in scene.walls.iter().enumerate() {
            let image1 = w1.segment.mirror(tx);
            for (j, w2) in scene.walls.iter().enumerate() {
                if i == j {
                    continue;
                }
                let image2 = w2.segment.mirror(image1);
                let ray2 = Segment::new(image2, rxp);
                let Some((t2, u2)) = ray2.crossing_params(&w2.segment) else { continue };
                if !(t2 > margin && t2 < 1.0 - margin && u2 > margin && u2 < 1.0 - margin) {
                    continue;
                }
                let p2 = image2 + (rxp - image2) * t2;
                let ray1 = Segment::new(image1, p2);
                let Some((t1, u1)) = ray1.crossing_params(&w1.segment) else { continue };
                if !(t1 > margin && t1 < 1.0 - margin && u1 > margin && u1 < 1.0 - margin) {
                    continue;
                }
                let p1 = image1 + (p2 - image1) * t1;
                if !same_side(&w1.segment, tx, p2) || !same_side(&w2.segment, p1, rxp) {
                    continue;
                }
                candidates.push(Candidate { vertices: vec![tx, p1, p2, rxp], bounces: vec![i, j] });
            }
        }
    }

    let mut paths = Vec::new();
    for c in candidates {
        let length: f64 = c.vertices.windows(2).map(|v| v[0].distance(v[1])).sum();
        let reflected = !c.bounces.is_empty();
        if reflected && length <= direct_len + 1e-9 {
            continue;
        }
        let mut amplitude = free_space_amplitude(length, wavelength);
        let mut penetrated = false;
        for (leg, v) in c.vertices.windows(2).enumerate() {
            let mut skip = Vec::with_capacity(2);
            if leg > 0 {
                skip.push(c.bounces[leg - 1]);
            }
            if leg < c.bounces.len() {
                skip.push(c.bounces[leg]);
            }
            for k in scene.crossings(v[0], v[1], &skip) {
                amplitude *= scene.material(&scene.walls[k]).penetration_amplitude();
                penetrated = true;
            }
        }
        for &b in &c.bounces {
            amplitude *= scene.material(&scene.walls[b]).reflection_amplitude();
        }
        let last = c.vertices[c.vertices.len() - 2];
        let aoa_world = wrap_two_pi((last - rxp).angle());
        let aoa = rx.to_array_frame(aoa_world);
        if !array.sees(aoa) {
            continue;
        }
        let phase = -2.0 * PI * length / wavelength + PI * c.bounces.len() as f64;
        let kind = match (reflected, penetrated) {
            (true, _) => PathKind::Reflected,
            (false, true) => PathKind::Penetrated,
            (false, false) => PathKind::LoS,
        };
        paths.push(TruePath {
            gain: Complex64::from_polar(amplitude, phase),
            delay: length / SPEED_OF_LIGHT,
            aoa,
            aoa_world,
            kind,
        });
    }
    paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    Ok(TruePathSet { paths })
}

/// Geometric LoS bearing from the receiver to the transmitter, world frame.
pub fn los_bearing(tx: Point2, rx: Point2) -> f64 {
    wrap_two_pi((tx - rx).angle())
}

fn same_side(wall: &Segment, p: Point2, q: Point2) -> bool {
    let d = wall.b - wall.a;
    let sp = d.cross(p - wall.a);
    let sq = d.cross(q - wall.a);
    sp * sq > 0.0
}
