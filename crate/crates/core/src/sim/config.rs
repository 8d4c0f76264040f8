use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{wrap_two_pi, Point2, TWO_PI};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// OFDM numerology of the sounding signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub subcarrier_spacing: f64,
    pub num_subcarriers: usize,
}

impl OfdmConfig {
    pub fn new(carrier_frequency: f64, bandwidth: f64, subcarrier_spacing: f64) -> Result<Self, SimError> {
        if !(carrier_frequency > 0.0 && bandwidth > 0.0 && subcarrier_spacing > 0.0) {
            return Err(SimError::InvalidConfig(
                "carrier, bandwidth and subcarrier spacing must be positive".into(),
            ));
        }
        let ratio = bandwidth / subcarrier_spacing;
        let count = ratio.round();
        if (ratio - count).abs() > 1e-6 {
            return Err(SimError::InvalidConfig(format!(
                "bandwidth {bandwidth} Hz is not a whole number of {subcarrier_spacing} Hz subcarriers"
            )));
        }
        if count < 2.0 {
            return Err(SimError::InvalidConfig("at least two subcarriers are required".into()));
        }
        Ok(Self {
            carrier_frequency,
            bandwidth,
            subcarrier_spacing,
            num_subcarriers: count as usize,
        })
    }

    /// 802.11a-style 20 MHz channel at 5.805 GHz, 64 subcarriers.
    pub fn wifi20() -> Self {
        Self::new(5.805e9, 20e6, 312.5e3).expect("valid profile")
    }

    /// Wideband profile: 2.4 GHz carrier, 1.28 GHz bandwidth, 128 tones of 10 MHz.
    pub fn uwb_wide() -> Self {
        Self::new(2.4e9, 1.28e9, 10e6).expect("valid profile")
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Duration of one delay sample (the OFDM sampling interval), seconds.
    pub fn sample_interval(&self) -> f64 {
        1.0 / self.bandwidth
    }

    pub fn seconds_to_samples(&self, seconds: f64) -> f64 {
        seconds * self.bandwidth
    }
}

/// Which arrival directions the receive array can see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldOfView {
    Full,
    /// Patch elements: only the open half-plane centred on the boresight.
    HalfPlane,
}

/// Receive array geometry, expressed in the array's own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// Element offsets in wavelengths.
    pub element_positions: Vec<[f64; 2]>,
    /// Boresight direction in the array frame, radians.
    pub boresight: f64,
    pub field_of_view: FieldOfView,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self::patch_pair()
    }
}

impl ArrayConfig {
    pub fn new(
        element_positions: Vec<[f64; 2]>,
        boresight: f64,
        field_of_view: FieldOfView,
    ) -> Result<Self, SimError> {
        if element_positions.len() < 2 {
            return Err(SimError::InvalidConfig("array needs at least two elements".into()));
        }
        for (i, a) in element_positions.iter().enumerate() {
            for b in &element_positions[i + 1..] {
                if (a[0] - b[0]).hypot(a[1] - b[1]) <= 0.0 {
                    return Err(SimError::InvalidConfig("array elements must not coincide".into()));
                }
            }
        }
        Ok(Self {
            element_positions,
            boresight,
            field_of_view,
        })
    }

    /// Two horizontal patch elements half a wavelength apart, broadside boresight.
    pub fn patch_pair() -> Self {
        Self {
            element_positions: vec![[0.0, 0.0], [0.5, 0.0]],
            boresight: FRAC_PI_2,
            field_of_view: FieldOfView::HalfPlane,
        }
    }

    /// Three omnidirectional elements on an equilateral triangle with the given side.
    pub fn triangle(side_wavelengths: f64) -> Self {
        let s = side_wavelengths;
        Self {
            element_positions: vec![[0.0, 0.0], [s, 0.0], [0.5 * s, 0.5 * s * 3f64.sqrt()]],
            boresight: FRAC_PI_2,
            field_of_view: FieldOfView::Full,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.element_positions.len()
    }

    /// Phase (radians) of element `m` for a plane wave arriving from `theta`.
    pub fn element_phase(&self, m: usize, theta: f64) -> f64 {
        let [dx, dy] = self.element_positions[m];
        TWO_PI * (dx * theta.cos() + dy * theta.sin())
    }

    /// Unit-modulus response of every element to a plane wave from `theta`
    /// (array frame).
    pub fn steering_vector(&self, theta: f64) -> Vec<Complex64> {
        (0..self.num_elements())
            .map(|m| Complex64::from_polar(1.0, self.element_phase(m, theta)))
            .collect()
    }

    /// Whether an arrival from `theta` (array frame) is received at all.
    pub fn sees(&self, theta: f64) -> bool {
        match self.field_of_view {
            FieldOfView::Full => true,
            FieldOfView::HalfPlane => {
                let off = crate::geometry::wrap_pi(theta - self.boresight);
                off.abs() < FRAC_PI_2
            }
        }
    }

    /// Direction of the line through all elements, if they are collinear.
    pub fn collinear_axis(&self) -> Option<f64> {
        let p0 = Point2::new(self.element_positions[0][0], self.element_positions[0][1]);
        let far = self
            .element_positions
            .iter()
            .map(|e| Point2::new(e[0], e[1]) - p0)
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
        let scale = far.norm();
        let collinear = self.element_positions.iter().all(|e| {
            let d = Point2::new(e[0], e[1]) - p0;
            (far.cross(d) / scale).abs() < 1e-9
        });
        collinear.then(|| far.angle())
    }

    /// The angular interval `[start, start + span)` over which the steering
    /// vector is one-to-one.
    pub fn unambiguous_range(&self) -> (f64, f64) {
        match self.collinear_axis() {
            Some(axis) => (wrap_two_pi(axis), PI),
            None => (0.0, TWO_PI),
        }
    }

    /// Maps an angle into the unambiguous range, folding mirror images of a
    /// linear array onto the searched half-plane.
    pub fn canonical_angle(&self, theta: f64) -> f64 {
        let (start, span) = self.unambiguous_range();
        if span >= TWO_PI {
            return wrap_two_pi(theta);
        }
        let rel = wrap_two_pi(theta - start);
        let folded = if rel < PI { rel } else { TWO_PI - rel };
        wrap_two_pi(start + folded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wifi_profile_has_64_tones() {
        let ofdm = OfdmConfig::wifi20();
        assert_eq!(ofdm.num_subcarriers, 64);
        assert!((ofdm.sample_interval() - 50e-9).abs() < 1e-18);
        assert_eq!(OfdmConfig::uwb_wide().num_subcarriers, 128);
    }

    #[test]
    fn rejects_fractional_tone_count() {
        assert!(OfdmConfig::new(5e9, 20e6, 7e6).is_err());
        assert!(OfdmConfig::new(5e9, 1e6, 1e6).is_err());
    }

    #[test]
    fn broadside_and_endfire() {
        let a = ArrayConfig::patch_pair();
        let bs = a.steering_vector(FRAC_PI_2);
        assert!(bs.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-12));
        let ef = a.steering_vector(0.0);
        assert!((ef[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((ef[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn triangle_matches_scalar_phase_formula() {
        let a = ArrayConfig::triangle(0.5);
        let theta = 30f64.to_radians();
        let v = a.steering_vector(theta);
        // element 2 sits at (0.25, 0.25 sqrt 3) wavelengths
        let expect_phase = 2.0 * PI * (0.25 * (3f64.sqrt() / 2.0) + 0.25 * 3f64.sqrt() * 0.5);
        assert!((v[2] - Complex64::from_polar(1.0, expect_phase)).norm() < 1e-12);
        let expect1 = 2.0 * PI * 0.5 * (3f64.sqrt() / 2.0);
        assert!((v[1] - Complex64::from_polar(1.0, expect1)).norm() < 1e-12);
        assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn patch_visibility_is_half_plane() {
        let a = ArrayConfig::patch_pair();
        assert!(a.sees(FRAC_PI_2));
        assert!(a.sees(0.01));
        assert!(!a.sees(-0.01));
        assert!(!a.sees(PI + 0.2));
    }

    #[test]
    fn unambiguous_ranges() {
        assert_eq!(ArrayConfig::patch_pair().unambiguous_range(), (0.0, PI));
        assert_eq!(ArrayConfig::triangle(0.5).unambiguous_range(), (0.0, TWO_PI));
        let a = ArrayConfig::patch_pair();
        assert!((a.canonical_angle(-0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_coincident_elements() {
        assert!(ArrayConfig::new(vec![[0.0, 0.0], [0.0, 0.0]], 0.0, FieldOfView::Full).is_err());
        assert!(ArrayConfig::new(vec![[0.0, 0.0]], 0.0, FieldOfView::Full).is_err());
    }
}
