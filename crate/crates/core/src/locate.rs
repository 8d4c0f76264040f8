//! Device position from LoS bearings taken along a trajectory.
//!
//! Each bearing `theta_n` measured at `(a_n, b_n)` constrains the device to
//! the line `p_y - b_n = tan(theta_n) (p_x - a_n)`. Stacking the lines gives
//! `A p = beta` with rows `[tan theta_n, -1]` and `beta_n = a_n tan theta_n - b_n`,
//! solved through the explicit 2x2 normal equations.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_pi, wrap_two_pi, Point2, TWO_PI};

/// Bearings closer than this to +-90 degrees are refused by the tangent form.
pub const VERTICAL_GUARD_DEG: f64 = 0.1;
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocateError {
    #[error("at least two bearings are needed, found {0}")]
    TooFewBearings(usize),
    #[error("bearing {index} at {angle_deg:.3} deg is too close to vertical for the tangent form")]
    NearVertical { index: usize, angle_deg: f64 },
    #[error("degenerate geometry (all bearings parallel), condition number {condition:e}")]
    SingularGeometry { condition: f64 },
    #[error("insufficient usable bearings: {reason} (kept {} of {})", stats.kept, stats.total)]
    InsufficientBearings { reason: String, stats: UtilizationStats },
    #[error("no records")]
    EmptyRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bearing {
    pub position: Point2,
    /// World-frame direction from `position` towards the device.
    pub angle: f64,
}

impl Bearing {
    pub fn new(position: Point2, angle: f64) -> Self {
        Self { position, angle }
    }

    /// Exact bearing from `position` to `target`.
    pub fn towards(position: Point2, target: Point2) -> Self {
        Self { position, angle: (target - position).angle() }
    }

    pub fn is_near_vertical(&self) -> bool {
        let off = (wrap_pi(self.angle).abs() - FRAC_PI_2).abs();
        off < VERTICAL_GUARD_DEG.to_radians()
    }
}

/// How each bearing becomes a row of the linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowForm {
    /// `[tan theta, -1] p = a tan theta - b`.
    #[default]
    Tangent,
    /// `[sin theta, -cos theta] p = a sin theta - b cos theta`. Same lines,
    /// different row weights, so the least-squares solution differs once the
    /// bearings are noisy.
    SinCos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsSystem {
    pub a: Vec<[f64; 2]>,
    pub beta: Vec<f64>,
}

impl LsSystem {
    pub fn build(bearings: &[Bearing], form: RowForm) -> Result<Self, LocateError> {
        if bearings.len() < 2 {
            return Err(LocateError::TooFewBearings(bearings.len()));
        }
        let mut a = Vec::with_capacity(bearings.len());
        let mut beta = Vec::with_capacity(bearings.len());
        for (index, b) in bearings.iter().enumerate() {
            let Point2 { x, y } = b.position;
            match form {
                RowForm::Tangent => {
                    if b.is_near_vertical() {
                        return Err(LocateError::NearVertical { index, angle_deg: b.angle.to_degrees() });
                    }
                    let t = b.angle.tan();
                    a.push([t, -1.0]);
                    beta.push(x * t - y);
                }
                RowForm::SinCos => {
                    let (s, c) = b.angle.sin_cos();
                    a.push([s, -c]);
                    beta.push(x * s - y * c);
                }
            }
        }
        Ok(Self { a, beta })
    }

    /// `(A^T A)^{-1} A^T beta`.
    pub fn solve(&self) -> Result<Point2, LocateError> {
        let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (row, b) in self.a.iter().zip(&self.beta) {
            s00 += row[0] * row[0];
            s01 += row[0] * row[1];
            s11 += row[1] * row[1];
            r0 += row[0] * b;
            r1 += row[1] * b;
        }
        // eigenvalues of the symmetric 2x2 normal matrix
        let mean = 0.5 * (s00 + s11);
        let spread = (0.25 * (s00 - s11).powi(2) + s01 * s01).sqrt();
        let (hi, lo) = (mean + spread, mean - spread);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(LocateError::SingularGeometry { condition });
        }
        let det = s00 * s11 - s01 * s01;
        let x = (s11 * r0 - s01 * r1) / det;
        let y = (-s01 * r0 + s00 * r1) / det;
        Ok(Point2::new(x, y))
    }

    /// `||A p - beta||^2`.
    pub fn residual(&self, p: Point2) -> f64 {
        self.a.iter().zip(&self.beta).map(|(r, b)| (r[0] * p.x + r[1] * p.y - b).powi(2)).sum()
    }
}

/// Tangent-form least squares.
pub fn solve(bearings: &[Bearing]) -> Result<Point2, LocateError> {
    solve_with(bearings, RowForm::Tangent)
}

pub fn solve_with(bearings: &[Bearing], form: RowForm) -> Result<Point2, LocateError> {
    LsSystem::build(bearings, form)?.solve()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRules {
    pub min_spacing: f64,
    pub min_span_deg: f64,
    pub min_bearings: usize,
}

impl Default for AdmissionRules {
    fn default() -> Self {
        Self { min_spacing: 0.4, min_span_deg: 20.0, min_bearings: 5 }
    }
}

/// Smallest arc (degrees) containing every angle.
pub fn angular_span_deg(angles: &[f64]) -> f64 {
    if angles.len() < 2 {
        return 0.0;
    }
    let mut a: Vec<f64> = angles.iter().map(|&t| wrap_two_pi(t)).collect();
    a.sort_by(f64::total_cmp);
    let mut largest_gap = a[0] + TWO_PI - a[a.len() - 1];
    for w in a.windows(2) {
        largest_gap = largest_gap.max(w[1] - w[0]);
    }
    (TWO_PI - largest_gap).max(0.0).to_degrees()
}

/// Greedy thinning along the walk: a bearing is kept when its position is at
/// least `min_spacing` from the previously kept one.
pub fn thin_bearings(bearings: &[Bearing], min_spacing: f64) -> Vec<Bearing> {
    let mut kept: Vec<Bearing> = Vec::new();
    for b in bearings {
        if kept.last().is_none_or(|k| k.position.distance(b.position) >= min_spacing) {
            kept.push(*b);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub admitted: bool,
    pub kept: Vec<Bearing>,
    pub span_deg: f64,
    pub reason: Option<String>,
}

/// Thins the bearings, then requires enough of them and a wide enough
/// angular span.
pub fn admit(bearings: &[Bearing], rules: &AdmissionRules) -> Admission {
    let kept = thin_bearings(bearings, rules.min_spacing);
    let span_deg = angular_span_deg(&kept.iter().map(|b| b.angle).collect::<Vec<_>>());
    let reason = if kept.len() < rules.min_bearings {
        Some(format!("{} spaced bearings, {} required", kept.len(), rules.min_bearings))
    } else if span_deg < rules.min_span_deg {
        Some(format!("angular span {span_deg:.1} deg below {} deg", rules.min_span_deg))
    } else {
        None
    };
    Admission { admitted: reason.is_none(), kept, span_deg, reason }
}

pub fn admit_trajectory(bearings: &[Bearing]) -> bool {
    admit(bearings, &AdmissionRules::default()).admitted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationStats {
    pub kept: usize,
    pub total: usize,
    pub rho: f64,
}

impl UtilizationStats {
    pub fn new(kept: usize, total: usize) -> Self {
        let rho = if total == 0 { 0.0 } else { kept as f64 / total as f64 };
        Self { kept, total, rho }
    }
}

/// A per-point bearing estimate with its gating decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedBearing {
    pub bearing: Bearing,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub estimate: Point2,
    pub stats: UtilizationStats,
    pub used: Vec<Bearing>,
}

/// Gating, admission and least squares for one trajectory. Bearings refused
/// by the tangent form are dropped before solving.
pub fn localize(points: &[GatedBearing], rules: &AdmissionRules, form: RowForm) -> Result<Localization, LocateError> {
    let stats = UtilizationStats::new(points.iter().filter(|p| p.kept).count(), points.len());
    let survivors: Vec<Bearing> = points
        .iter()
        .filter(|p| p.kept)
        .map(|p| p.bearing)
        .filter(|b| form == RowForm::SinCos || !b.is_near_vertical())
        .collect();
    let admission = admit(&survivors, rules);
    if !admission.admitted {
        return Err(LocateError::InsufficientBearings {
            reason: admission.reason.unwrap_or_default(),
            stats,
        });
    }
    let estimate = solve_with(&admission.kept, form)?;
    Ok(Localization { estimate, stats, used: admission.kept })
}

/// Empirical CDF as `(value, fraction <= value)` pairs.
pub fn error_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>, LocateError> {
    if errors.is_empty() {
        return Err(LocateError::EmptyRecords);
    }
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.into_iter().enumerate().map(|(i, e)| (e, (i + 1) as f64 / n)).collect())
}

pub fn fraction_within(errors: &[f64], limit: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e <= limit).count() as f64 / errors.len() as f64
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
