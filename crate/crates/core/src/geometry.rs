//! Planar geometry helpers shared by the propagation model, the trajectory
//! generator and the bearing solver.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

pub const TWO_PI: f64 = 2.0 * PI;

/// A point or displacement in the horizontal plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Direction of this vector, radians in (-pi, pi].
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// A closed line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub const fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Mirror image of `p` across the infinite line through this segment.
    pub fn mirror(&self, p: Point2) -> Point2 {
        let d = self.b - self.a;
        let t = (p - self.a).dot(d) / d.dot(d);
        let foot = self.a + d * t;
        foot * 2.0 - p
    }

    /// Parameters `(t, u)` of the crossing of `self` (at `a + t (b - a)`) and
    /// `other` (at `other.a + u (other.b - other.a)`), or `None` when parallel.
    pub fn crossing_params(&self, other: &Segment) -> Option<(f64, f64)> {
        let r = self.b - self.a;
        let s = other.b - other.a;
        let denom = r.cross(s);
        if denom.abs() < 1e-15 * r.norm().max(1e-300) * s.norm().max(1e-300) {
            return None;
        }
        let q = other.a - self.a;
        Some((q.cross(s) / denom, q.cross(r) / denom))
    }

    /// True when the two segments cross at a point interior to both, with
    /// `margin` excluded at every endpoint (parametric units).
    pub fn crosses(&self, other: &Segment, margin: f64) -> bool {
        match self.crossing_params(other) {
            Some((t, u)) => t > margin && t < 1.0 - margin && u > margin && u < 1.0 - margin,
            None => false,
        }
    }

    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let d = self.b - self.a;
        let len2 = d.dot(d);
        let t = if len2 > 0.0 {
            ((p - self.a).dot(d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.a + d * t).distance(p)
    }
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_two_pi(theta: f64) -> f64 {
    let w = theta.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2pi for tiny negative inputs
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pi(theta: f64) -> f64 {
    let w = wrap_two_pi(theta);
    if w > PI {
        w - TWO_PI
    } else {
        w
    }
}

/// Absolute angular difference in `[0, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_pi(a - b).abs()
}
