//! Multi-antenna OFDM channel frequency response synthesis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{ArrayConfig, OfdmConfig};
use super::propagation::TruePathSet;
use super::SimError;

/// One time slot of channel measurements, antennas x subcarriers, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfrSnapshot {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
    pub data: Vec<Complex64>,
    /// Per-entry noise variance that was added (0 when noiseless).
    pub noise_power: f64,
    pub timestamp_index: usize,
}

impl CfrSnapshot {
    pub fn zeros(num_antennas: usize, num_subcarriers: usize) -> Self {
        Self {
            num_antennas,
            num_subcarriers,
            data: vec![Complex64::new(0.0, 0.0); num_antennas * num_subcarriers],
            noise_power: 0.0,
            timestamp_index: 0,
        }
    }

    pub fn at(&self, m: usize, n: usize) -> Complex64 {
        self.data[m * self.num_subcarriers + n]
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.num_subcarriers..(m + 1) * self.num_subcarriers]
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Adds `gain * atom(delay, theta)` into `out`, where the atom is
/// `exp(-j 2 pi n delay / N_c) a_m(theta)` and `delay` is in samples.
pub(crate) fn accumulate_atom(
    out: &mut [Complex64],
    array: &ArrayConfig,
    num_subcarriers: usize,
    gain: Complex64,
    delay: f64,
    theta: f64,
) {
    let steer = array.steering_vector(theta);
    let step = -2.0 * PI * delay / num_subcarriers as f64;
    for (m, a) in steer.iter().enumerate() {
        let row = &mut out[m * num_subcarriers..(m + 1) * num_subcarriers];
        let base = gain * a;
        for (n, slot) in row.iter_mut().enumerate() {
            *slot += base * Complex64::from_polar(1.0, step * n as f64);
        }
    }
}

/// Evaluates the multipath channel model and adds circular Gaussian noise at
/// the requested per-entry SNR. `snr_db = +inf` produces a noiseless matrix.
pub fn synthesize_cfr(
    paths: &TruePathSet,
    ofdm: &OfdmConfig,
    array: &ArrayConfig,
    snr_db: f64,
    rng_seed: u64,
) -> Result<CfrSnapshot, SimError> {
    if paths.is_empty() {
        return Err(SimError::InvalidConfig("cannot synthesize a channel with no paths".into()));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(SimError::InvalidConfig(format!("invalid SNR {snr_db} dB")));
    }
    let (nr, nc) = (array.num_elements(), ofdm.num_subcarriers);
    let mut snap = CfrSnapshot::zeros(nr, nc);
    for p in &paths.paths {
        let delay = ofdm.seconds_to_samples(p.delay);
        accumulate_atom(&mut snap.data, array, nc, p.gain, delay, p.aoa);
    }
    if snr_db.is_finite() {
        let signal = snap.energy() / (nr * nc) as f64;
        let noise_power = signal / 10f64.powf(snr_db / 10.0);
        let sigma = (noise_power / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for z in snap.data.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(sigma * re, sigma * im);
        }
        snap.noise_power = noise_power;
    }
    Ok(snap)
}
