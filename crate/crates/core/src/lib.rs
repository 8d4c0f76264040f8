//! Smartphone-anchored localization of Wi-Fi IoT devices.
//!
//! The crate covers the full chain from synthetic channel measurements to a
//! device position estimate:
//!
//! * [`sim`] generates multipath ground truth and noisy multi-antenna CSI,
//! * [`nomp`] extracts per-snapshot path parameters (gain, delay, angle),
//! * [`nn`] is the small differentiable kernel used by the two networks,
//! * [`losest`] fuses neighbouring trajectory points into a LoS bearing,
//! * [`anodet`] scores segments by reverse reconstruction error,
//! * [`locate`] intersects bearings by least squares.

pub mod anodet;
pub mod geometry;
pub mod locate;
pub mod losest;
pub mod nn;
pub mod nomp;
pub mod observation;
pub mod sim;

pub use geometry::Point2;
