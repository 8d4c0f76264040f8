//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Parameters;

pub const FD_EPSILON: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(index, analytic, numeric)` of every checked coordinate.
    pub samples: Vec<(usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn pick(n: usize, coords: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, coords.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

fn report(samples: Vec<(usize, f64, f64)>) -> GradCheckReport {
    let max_rel_error = samples.iter().map(|&(_, a, n)| relative_error(a, n)).fold(0.0, f64::max);
    GradCheckReport { checked: samples.len(), max_rel_error, samples }
}

/// Compares `analytic` (a gradient buffer shaped like `params`) against
/// central differences of `loss` on `coords` random coordinates.
pub fn check_parameter_gradient<P, F>(params: &P, analytic: &P, loss: F, coords: usize, seed: u64) -> GradCheckReport
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let base = params.flat();
    let grad = analytic.flat();
    let mut probe = params.clone();
    let mut values = base.clone();
    let samples = pick(base.len(), coords, seed)
        .into_iter()
        .map(|i| {
            values[i] = base[i] + FD_EPSILON;
            probe.set_flat(&values);
            let up = loss(&probe);
            values[i] = base[i] - FD_EPSILON;
            probe.set_flat(&values);
            let down = loss(&probe);
            values[i] = base[i];
            (i, grad[i], (up - down) / (2.0 * FD_EPSILON))
        })
        .collect();
    report(samples)
}

/// Same check for the gradient with respect to a flat input vector.
pub fn check_input_gradient<F>(x: &[f64], analytic: &[f64], loss: F, coords: usize, seed: u64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    let mut values = x.to_vec();
    let samples = pick(x.len(), coords, seed)
        .into_iter()
        .map(|i| {
            values[i] = x[i] + FD_EPSILON;
            let up = loss(&values);
            values[i] = x[i] - FD_EPSILON;
            let down = loss(&values);
            values[i] = x[i];
            (i, analytic[i], (up - down) / (2.0 * FD_EPSILON))
        })
        .collect();
    report(samples)
}
