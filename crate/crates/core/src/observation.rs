//! Per-point extraction results along a trajectory, the common input of the
//! networks and of localization.

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::nomp::ChannelParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointObservation {
    pub index: usize,
    pub position: Point2,
    pub orientation: f64,
    /// Geometric bearing from this point to the device, world frame.
    pub true_los_aoa: f64,
    /// Whether the direct path reached the array at all.
    pub los_received: bool,
    /// Extracted paths with angles already rotated into the world frame.
    pub params: ChannelParamSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryObservation {
    pub id: u64,
    pub scenario: String,
    pub device: Point2,
    pub num_subcarriers: usize,
    pub points: Vec<PointObservation>,
}
