//! Newtonized orthogonal matching pursuit over the joint (delay, angle)
//! dictionary of a multi-antenna OFDM snapshot.
//!
//! Each detection is a coarse grid search on the matched-filter energy
//! followed by damped Newton refinement of the continuous parameters. After a
//! path is added, the earlier paths are re-refined one at a time against the
//! residual and all gains are re-fit jointly by least squares. Every step is
//! accepted only if it lowers the residual energy, so the residual is
//! non-increasing over the whole extraction.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_two_pi, TWO_PI};
use crate::sim::{ArrayConfig, CfrSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NompConfig {
    pub delay_oversample: usize,
    pub angle_grid_size: usize,
    pub newton_steps: usize,
    /// Re-refinement sweeps over earlier paths after each detection.
    pub cyclic_rounds: usize,
}

impl Default for NompConfig {
    fn default() -> Self {
        Self { delay_oversample: 4, angle_grid_size: 180, newton_steps: 10, cyclic_rounds: 1 }
    }
}

/// One extracted path. `delay` is in OFDM samples, `aoa` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathEstimate {
    pub gain_mag: f64,
    pub gain_phase: f64,
    pub delay: f64,
    pub aoa: f64,
}

impl PathEstimate {
    pub fn from_gain(gain: Complex64, delay: f64, aoa: f64) -> Self {
        Self { gain_mag: gain.norm(), gain_phase: gain.arg(), delay, aoa }
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::from_polar(self.gain_mag, self.gain_phase)
    }

    pub fn is_placeholder(&self) -> bool {
        self.gain_mag == 0.0
    }
}

/// Exactly `L` paths sorted by descending gain magnitude.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelParamSet {
    pub paths: Vec<PathEstimate>,
    pub residual_energy: f64,
}

impl ChannelParamSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn max_gain(&self) -> f64 {
        self.paths.iter().map(|p| p.gain_mag).fold(0.0, f64::max)
    }

    /// Rotates every detected path's angle by the handset orientation
    /// (array frame to world frame). Zero-gain placeholders are left as-is.
    pub fn rotated(&self, orientation: f64) -> ChannelParamSet {
        ChannelParamSet {
            paths: self
                .paths
                .iter()
                .map(|p| {
                    if p.is_placeholder() {
                        *p
                    } else {
                        PathEstimate { aoa: wrap_two_pi(p.aoa + orientation), ..*p }
                    }
                })
                .collect(),
            residual_energy: self.residual_energy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefineDiagnostics {
    pub accepted_steps: usize,
    /// Steps where the Hessian was not negative definite and a scaled
    /// gradient step was used instead.
    pub gradient_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub params: ChannelParamSet,
    /// Residual energy before any detection and after each outer iteration.
    pub residual_history: Vec<f64>,
}

/// Matched-filter value and its first/second derivatives in (delay, angle).
#[derive(Debug, Clone, Copy)]
struct Correlation {
    c: Complex64,
    d_tau: Complex64,
    d_theta: Complex64,
    d_tau_tau: Complex64,
    d_tau_theta: Complex64,
    d_theta_theta: Complex64,
}

impl Correlation {
    fn energy(&self) -> f64 {
        self.c.norm_sqr()
    }

    fn gradient(&self) -> [f64; 2] {
        [2.0 * (self.c.conj() * self.d_tau).re, 2.0 * (self.c.conj() * self.d_theta).re]
    }

    fn hessian(&self) -> [[f64; 2]; 2] {
        let h = |a: Complex64, b: Complex64, ab: Complex64| 2.0 * (a.conj() * b + self.c.conj() * ab).re;
        let h00 = h(self.d_tau, self.d_tau, self.d_tau_tau);
        let h01 = h(self.d_tau, self.d_theta, self.d_tau_theta);
        let h11 = h(self.d_theta, self.d_theta, self.d_theta_theta);
        [[h00, h01], [h01, h11]]
    }
}

/// Path extractor bound to one array geometry and subcarrier count.
#[derive(Clone)]
pub struct Extractor {
    array: ArrayConfig,
    num_subcarriers: usize,
    config: NompConfig,
    fft: Arc<dyn Fft<f64>>,
    angle_grid: Vec<f64>,
    /// Conjugated steering vectors, `angle_grid.len()` rows of `N_r`.
    steering_conj: Vec<Complex64>,
}

impl std::fmt::Debug for Extractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Extractor")
            .field("array", &self.array)
            .field("num_subcarriers", &self.num_subcarriers)
            .field("config", &self.config)
            .finish()
    }
}

impl Extractor {
    pub fn new(array: &ArrayConfig, num_subcarriers: usize, config: NompConfig) -> Self {
        let oversample = config.delay_oversample.max(1);
        let grid_size = config.angle_grid_size.max(8);
        let fft = FftPlanner::new().plan_fft_inverse(num_subcarriers * oversample);
        let (start, span) = array.unambiguous_range();
        let angle_grid: Vec<f64> =
            (0..grid_size).map(|k| wrap_two_pi(start + span * k as f64 / grid_size as f64)).collect();
        let steering_conj = angle_grid
            .iter()
            .flat_map(|&t| array.steering_vector(t).into_iter().map(|z| z.conj()))
            .collect();
        Self {
            array: array.clone(),
            num_subcarriers,
            config: NompConfig { delay_oversample: oversample, angle_grid_size: grid_size, ..config },
            fft,
            angle_grid,
            steering_conj,
        }
    }

    pub fn array(&self) -> &ArrayConfig {
        &self.array
    }

    pub fn config(&self) -> &NompConfig {
        &self.config
    }

    fn atom_norm_sqr(&self) -> f64 {
        (self.array.num_elements() * self.num_subcarriers) as f64
    }

    fn check_shape(&self, snap: &CfrSnapshot) {
        assert_eq!(snap.num_antennas, self.array.num_elements(), "snapshot antenna count");
        assert_eq!(snap.num_subcarriers, self.num_subcarriers, "snapshot subcarrier count");
    }

    /// `sum_n |y(f_n) - sum_l g_l e^{-j 2 pi n tau_l / N_c} a(theta_l)|^2`.
    pub fn objective(&self, cfr: &CfrSnapshot, params: &ChannelParamSet) -> f64 {
        self.check_shape(cfr);
        let mut model = CfrSnapshot::zeros(cfr.num_antennas, cfr.num_subcarriers);
        for p in &params.paths {
            self.add_atom(&mut model.data, p.gain(), p.delay, p.aoa);
        }
        cfr.data.iter().zip(&model.data).map(|(y, m)| (y - m).norm_sqr()).sum()
    }

    fn add_atom(&self, out: &mut [Complex64], gain: Complex64, delay: f64, theta: f64) {
        let n_c = self.num_subcarriers;
        let step = Complex64::from_polar(1.0, -2.0 * PI * delay / n_c as f64);
        for m in 0..self.array.num_elements() {
            let mut z = gain * Complex64::from_polar(1.0, self.array.element_phase(m, theta));
            for slot in &mut out[m * n_c..(m + 1) * n_c] {
                *slot += z;
                z *= step;
            }
        }
    }

    fn correlate(&self, residual: &[Complex64], delay: f64, theta: f64) -> Correlation {
        let n_c = self.num_subcarriers;
        let k = TWO_PI / n_c as f64;
        let rot = Complex64::from_polar(1.0, k * delay);
        let j = Complex64::new(0.0, 1.0);
        let mut out = Correlation {
            c: Complex64::default(),
            d_tau: Complex64::default(),
            d_theta: Complex64::default(),
            d_tau_tau: Complex64::default(),
            d_tau_theta: Complex64::default(),
            d_theta_theta: Complex64::default(),
        };
        for m in 0..self.array.num_elements() {
            let [dx, dy] = self.array.element_positions[m];
            let ca = Complex64::from_polar(1.0, -self.array.element_phase(m, theta));
            let psi = TWO_PI * (-dx * theta.sin() + dy * theta.cos());
            let psi2 = TWO_PI * (-dx * theta.cos() - dy * theta.sin());
            let (mut s0, mut s1, mut s2) = (Complex64::default(), Complex64::default(), Complex64::default());
            let mut e = Complex64::new(1.0, 0.0);
            for (n, r) in residual[m * n_c..(m + 1) * n_c].iter().enumerate() {
                let t = e * r;
                let nf = n as f64;
                s0 += t;
                s1 += t * nf;
                s2 += t * (nf * nf);
                e *= rot;
            }
            out.c += ca * s0;
            out.d_tau += j * k * ca * s1;
            out.d_tau_tau += -(k * k) * ca * s2;
            out.d_theta += -j * psi * ca * s0;
            out.d_tau_theta += k * psi * ca * s1;
            out.d_theta_theta += (-j * psi2 - psi * psi) * ca * s0;
        }
        out
    }

    fn normalize(&self, delay: f64, theta: f64) -> (f64, f64) {
        let n_c = self.num_subcarriers as f64;
        let mut d = delay.rem_euclid(n_c);
        if d >= n_c {
            d = 0.0;
        }
        (d, self.array.canonical_angle(theta))
    }

    /// Best grid cell of `|<atom(tau, theta), residual>|^2`, with its
    /// least-squares gain.
    pub fn detect_coarse(&self, residual: &CfrSnapshot) -> PathEstimate {
        self.check_shape(residual);
        let n_c = self.num_subcarriers;
        let n_r = self.array.num_elements();
        let os = self.config.delay_oversample;
        let size = n_c * os;
        let mut spectra = vec![Complex64::default(); n_r * size];
        for m in 0..n_r {
            let buf = &mut spectra[m * size..(m + 1) * size];
            buf[..n_c].copy_from_slice(residual.row(m));
            self.fft.process(buf);
        }
        let mut best = (0usize, 0usize, -1.0f64, Complex64::default());
        for kd in 0..size {
            for (ka, steer) in self.steering_conj.chunks_exact(n_r).enumerate() {
                let mut c = Complex64::default();
                for m in 0..n_r {
                    c += steer[m] * spectra[m * size + kd];
                }
                let e = c.norm_sqr();
                if e > best.2 {
                    best = (kd, ka, e, c);
                }
            }
        }
        let gain = best.3 / self.atom_norm_sqr();
        PathEstimate::from_gain(gain, best.0 as f64 / os as f64, self.angle_grid[best.1])
    }

    /// Damped Newton ascent of the matched-filter energy in (delay, angle).
    pub fn newton_refine(
        &self,
        residual: &CfrSnapshot,
        estimate: PathEstimate,
        steps: usize,
    ) -> (PathEstimate, RefineDiagnostics) {
        self.check_shape(residual);
        let (est, diag) = self.refine_slice(&residual.data, estimate, steps);
        (est, diag)
    }

    fn refine_slice(&self, residual: &[Complex64], estimate: PathEstimate, steps: usize) -> (PathEstimate, RefineDiagnostics) {
        let mut diag = RefineDiagnostics::default();
        let (mut tau, mut theta) = (estimate.delay, estimate.aoa);
        let mut corr = self.correlate(residual, tau, theta);
        for _ in 0..steps {
            let g = corr.gradient();
            let h = corr.hessian();
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            let scale = h[0][0].abs().max(h[1][1].abs()).max(f64::MIN_POSITIVE);
            let newton_ok = h[0][0] < 0.0 && det > 1e-12 * scale * scale;
            let step = if newton_ok {
                // -H^{-1} g
                [
                    -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                    -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
                ]
            } else {
                diag.gradient_fallbacks += 1;
                let s0 = if h[0][0].abs() > 0.0 { g[0] / h[0][0].abs() } else { 0.0 };
                let s1 = if h[1][1].abs() > 0.0 { g[1] / h[1][1].abs() } else { 0.0 };
                [s0, s1]
            };
            if !(step[0].is_finite() && step[1].is_finite()) || (step[0].abs() + step[1].abs()) < 1e-13 {
                break;
            }
            let mut factor = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let (t, a) = (tau + factor * step[0], theta + factor * step[1]);
                let trial = self.correlate(residual, t, a);
                if trial.energy() > corr.energy() {
                    accepted = Some((t, a, trial));
                    break;
                }
                factor *= 0.5;
            }
            match accepted {
                Some((t, a, trial)) => {
                    let (t, a) = self.normalize(t, a);
                    tau = t;
                    theta = a;
                    corr = trial;
                    diag.accepted_steps += 1;
                }
                None => break,
            }
        }
        if diag.accepted_steps == 0 {
            return (estimate, diag);
        }
        let gain = corr.c / self.atom_norm_sqr();
        (PathEstimate::from_gain(gain, tau, theta), diag)
    }

    /// Greedy extraction of `num_paths` paths. The result is sorted by
    /// descending gain and padded with zero-gain placeholders.
    pub fn extract_paths(&self, cfr: &CfrSnapshot, num_paths: usize) -> Extraction {
        assert!(num_paths >= 1, "at least one path must be requested");
        self.check_shape(cfr);
        let mut residual = cfr.data.clone();
        let energy = |r: &[Complex64]| r.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let mut current = energy(&residual);
        let mut history = vec![current];
        let mut found: Vec<PathEstimate> = Vec::with_capacity(num_paths);
        let steps = self.config.newton_steps;

        for _ in 0..num_paths {
            if current <= 0.0 {
                break;
            }
            let snapshot = CfrSnapshot { data: residual.clone(), ..cfr.clone() };
            let coarse = self.detect_coarse(&snapshot);
            let (est, _) = self.refine_slice(&residual, coarse, steps);
            if est.gain_mag == 0.0 {
                break;
            }
            self.add_atom(&mut residual, -est.gain(), est.delay, est.aoa);
            let previous = found.len();
            found.push(est);

            for _ in 0..self.config.cyclic_rounds {
                for i in 0..previous {
                    let p = found[i];
                    self.add_atom(&mut residual, p.gain(), p.delay, p.aoa);
                    let (mut refined, _) = self.refine_slice(&residual, p, steps);
                    if refined == p {
                        // keep the old gain unless the LS gain is better
                        let c = self.correlate(&residual, p.delay, p.aoa).c / self.atom_norm_sqr();
                        refined = PathEstimate::from_gain(c, p.delay, p.aoa);
                    }
                    self.add_atom(&mut residual, -refined.gain(), refined.delay, refined.aoa);
                    found[i] = refined;
                }
            }

            current = energy(&residual);
            if let Some((gains, refit_residual)) = self.joint_gains(&cfr.data, &found) {
                let e = energy(&refit_residual);
                if e <= current {
                    for (p, g) in found.iter_mut().zip(gains) {
                        *p = PathEstimate::from_gain(g, p.delay, p.aoa);
                    }
                    residual = refit_residual;
                    current = e;
                }
            }
            history.push(current);
        }

        found.sort_by(|a, b| b.gain_mag.total_cmp(&a.gain_mag));
        found.resize(num_paths, PathEstimate::default());
        Extraction { params: ChannelParamSet { paths: found, residual_energy: current }, residual_history: history }
    }

    fn joint_gains(&self, y: &[Complex64], paths: &[PathEstimate]) -> Option<(Vec<Complex64>, Vec<Complex64>)> {
        let atoms: Vec<Vec<Complex64>> = paths
            .iter()
            .map(|p| {
                let mut a = vec![Complex64::default(); y.len()];
                self.add_atom(&mut a, Complex64::new(1.0, 0.0), p.delay, p.aoa);
                a
            })
            .collect();
        let k = atoms.len();
        let gram = DMatrix::from_fn(k, k, |i, j| {
            atoms[i].iter().zip(&atoms[j]).map(|(a, b)| a.conj() * b).sum::<Complex64>()
        });
        let rhs = DVector::from_fn(k, |i, _| atoms[i].iter().zip(y).map(|(a, v)| a.conj() * v).sum::<Complex64>());
        let gains = gram.lu().solve(&rhs)?;
        if gains.iter().any(|g| !(g.re.is_finite() && g.im.is_finite())) {
            return None;
        }
        let mut residual = y.to_vec();
        for (a, g) in atoms.iter().zip(gains.iter()) {
            for (r, v) in residual.iter_mut().zip(a) {
                *r -= g * v;
            }
        }
        Some((gains.iter().copied().collect(), residual))
    }
}

/// Convenience wrapper: build an extractor with the default configuration
/// and evaluate the fit objective.
pub fn objective(cfr: &CfrSnapshot, array: &ArrayConfig, params: &ChannelParamSet) -> f64 {
    Extractor::new(array, cfr.num_subcarriers, NompConfig::default()).objective(cfr, params)
}

/// Extracts `num_paths` paths with the default configuration.
pub fn extract_paths(cfr: &CfrSnapshot, array: &ArrayConfig, num_paths: usize) -> ChannelParamSet {
    Extractor::new(array, cfr.num_subcarriers, NompConfig::default()).extract_paths(cfr, num_paths).params
}
