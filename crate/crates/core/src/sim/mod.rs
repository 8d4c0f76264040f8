//! Synthetic multipath channel generation: room geometry, image-method ray
//! tracing, OFDM channel synthesis and handset walks.

mod cfr;
mod config;
mod propagation;
mod scene;
mod trajectory;

use thiserror::Error;

pub use cfr::{synthesize_cfr, CfrSnapshot};
pub use config::{ArrayConfig, FieldOfView, OfdmConfig, SPEED_OF_LIGHT};
pub use propagation::{
    free_space_amplitude, los_bearing, trace_paths, PathKind, RxPose, TruePath, TruePathSet,
};
pub use scene::{default_materials, Device, Material, Region, Scene, Wall};
pub use trajectory::{generate_trajectory, OrientationPolicy, Trajectory, TrajectorySpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scene file line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reflection order {0} is not supported (maximum 2)")]
    UnsupportedReflectionOrder(usize),
    #[error("transmitter and receiver coincide")]
    CoincidentEndpoints,
    #[error("a {length}-point walk with {step} m steps does not fit in the region")]
    TrajectoryDoesNotFit { length: usize, step: f64 },
}
