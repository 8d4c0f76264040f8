use std::f64::consts::PI;

use locnet_core::geometry::{angle_diff, wrap_two_pi};
use locnet_core::nomp::{Extractor, NompConfig, PathEstimate};
use locnet_core::sim::{synthesize_cfr, ArrayConfig, CfrSnapshot, OfdmConfig, PathKind, TruePath, TruePathSet};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn snapshot(ofdm: &OfdmConfig, array: &ArrayConfig, paths: &[(Complex64, f64, f64)], snr: f64, seed: u64) -> CfrSnapshot {
    let set = TruePathSet {
        paths: paths
            .iter()
            .map(|&(gain, d, aoa)| TruePath {
                gain,
                delay: d * ofdm.sample_interval(),
                aoa,
                aoa_world: aoa,
                kind: PathKind::Reflected,
            })
            .collect(),
    };
    synthesize_cfr(&set, ofdm, array, snr, seed).unwrap()
}

/// Brute-force matched filter, written independently of the extractor.
fn matched(cfr: &CfrSnapshot, array: &ArrayConfig, tau: f64, theta: f64) -> Complex64 {
    let n_c = cfr.num_subcarriers as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..cfr.num_antennas {
        let [dx, dy] = array.element_positions[m];
        for n in 0..cfr.num_subcarriers {
            let phase = -2.0 * PI * n as f64 * tau / n_c + 2.0 * PI * (dx * theta.cos() + dy * theta.sin());
            acc += Complex64::from_polar(1.0, -phase) * cfr.at(m, n);
        }
    }
    acc
}

/// Exhaustive search on a grid 100x finer than the extractor's coarse grid,
/// restricted to one coarse cell around `centre`.
fn fine_grid_oracle(cfr: &CfrSnapshot, array: &ArrayConfig, centre: (f64, f64)) -> (f64, f64, Complex64) {
    let d_step = 0.25 / 100.0;
    let a_step = (2.0 * PI / 180.0) / 100.0;
    let mut best = (0.0, 0.0, -1.0, Complex64::new(0.0, 0.0));
    for i in -100..=100 {
        let tau = centre.0 + i as f64 * d_step;
        for k in -100..=100 {
            let theta = centre.1 + k as f64 * a_step;
            let c = matched(cfr, array, tau, theta);
            if c.norm_sqr() > best.2 {
                best = (tau, theta, c.norm_sqr(), c);
            }
        }
    }
    let norm = (cfr.num_antennas * cfr.num_subcarriers) as f64;
    (best.0, best.1, best.3 / norm)
}

#[test]
fn single_path_matches_fine_grid_oracle() {
    let ofdm = OfdmConfig::wifi20();
    let array = ArrayConfig::triangle(0.5);
    let ex = Extractor::new(&array, 64, NompConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let tau = rng.random_range(1.0..40.0);
        let theta = rng.random_range(0.0..2.0 * PI);
        let g = Complex64::from_polar(rng.random_range(0.1..2.0), rng.random_range(-PI..PI));
        let cfr = snapshot(&ofdm, &array, &[(g, tau, theta)], f64::INFINITY, case);
        let est = ex.extract_paths(&cfr, 1).params.paths[0];
        // The oracle is only evaluated every 10th case; it is expensive.
        if case % 10 == 0 {
            let (ot, oa, og) = fine_grid_oracle(&cfr, &array, (tau, theta));
            assert!((est.delay - ot).abs() < 0.05, "case {case}: delay {} vs oracle {ot}", est.delay);
            assert!(angle_diff(est.aoa, oa).abs() < 0.5f64.to_radians(), "case {case}");
            assert!((est.gain_mag - og.norm()).abs() < 0.01 * og.norm(), "case {case}");
        }
        assert!((est.delay - tau).abs() < 0.05, "case {case}: delay {} vs {tau}", est.delay);
        assert!(angle_diff(est.aoa, theta).abs() < 0.5f64.to_radians(), "case {case}");
        assert!((est.gain_mag - g.norm()).abs() < 0.01 * g.norm(), "case {case}");
    }
}

#[test]
fn off_grid_refinement_converges_within_ten_steps() {
    let ofdm = OfdmConfig::wifi20();
    let array = ArrayConfig::triangle(0.5);
    let ex = Extractor::new(&array, 64, NompConfig::default());
    let (tau, theta) = (7.137, 1.2345);
    let cfr = snapshot(&ofdm, &array, &[(Complex64::new(0.5, 0.5), tau, theta)], f64::INFINITY, 0);
    let (refined, diag) = ex.newton_refine(&cfr, ex.detect_coarse(&cfr), 10);
    assert!(diag.accepted_steps <= 10);
    let (ot, oa, _) = fine_grid_oracle(&cfr, &array, (tau, theta));
    assert!((refined.delay - ot).abs() < 0.05);
    assert!(angle_diff(refined.aoa, oa).abs() < 0.5f64.to_radians());
}

#[test]
fn three_separated_paths_are_recovered() {
    let ofdm = OfdmConfig::wifi20();
    let array = ArrayConfig::triangle(0.5);
    let ex = Extractor::new(&array, 64, NompConfig::default());
    let truth = [
        (Complex64::from_polar(1.0, 0.3), 3.4, 0.6),
        (Complex64::from_polar(0.6, -1.2), 11.8, 2.9),
        (Complex64::from_polar(0.35, 2.0), 22.3, 4.8),
    ];
    let cfr = snapshot(&ofdm, &array, &truth, f64::INFINITY, 0);
    let out = ex.extract_paths(&cfr, 5);
    let p = &out.params.paths;
    for (est, &(g, tau, theta)) in p.iter().zip(&truth) {
        assert!((est.delay - tau).abs() < 0.05, "{est:?}");
        assert!(angle_diff(est.aoa, theta).abs() < 0.5f64.to_radians(), "{est:?}");
        assert!((est.gain_mag - g.norm()).abs() < 0.01 * g.norm(), "{est:?}");
    }
    assert!(p[3].gain_mag < 0.01 * p[0].gain_mag && p[4].gain_mag < 0.01 * p[0].gain_mag);
}

#[test]
fn pure_noise_keeps_most_of_the_energy() {
    let array = ArrayConfig::triangle(0.5);
    let ex = Extractor::new(&array, 64, NompConfig::default());
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfr = CfrSnapshot::zeros(3, 64);
        for z in cfr.data.iter_mut() {
            let re: f64 = rng.sample(rand_distr::StandardNormal);
            let im: f64 = rng.sample(rand_distr::StandardNormal);
            *z = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
        }
        let out = ex.extract_paths(&cfr, 5);
        assert!(out.params.residual_energy >= 0.5 * cfr.energy(), "seed {seed}");
    }
}

#[test]
fn extraction_is_bit_identical_on_rerun() {
    let ofdm = OfdmConfig::wifi20();
    let array = ArrayConfig::triangle(0.5);
    let ex = Extractor::new(&array, 64, NompConfig::default());
    let cfr = snapshot(&ofdm, &array, &[(Complex64::new(1.0, 0.0), 4.3, 1.0), (Complex64::new(0.4, 0.2), 9.1, 3.0)], 25.0, 9);
    assert_eq!(ex.extract_paths(&cfr, 5), ex.extract_paths(&cfr, 5));
}

fn path_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.05f64..1.5, -PI..PI, 0.0f64..60.0, 0.0f64..(2.0 * PI))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residual_never_increases(paths in prop::collection::vec(path_strategy(), 1..5), snr in 5.0f64..40.0, seed in 0u64..1000) {
        let ofdm = OfdmConfig::wifi20();
        let array = ArrayConfig::triangle(0.5);
        let planted: Vec<_> = paths.iter().map(|&(m, ph, d, a)| (Complex64::from_polar(m, ph), d, a)).collect();
        let cfr = snapshot(&ofdm, &array, &planted, snr, seed);
        let ex = Extractor::new(&array, 64, NompConfig::default());
        let out = ex.extract_paths(&cfr, 5);
        for w in out.residual_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(out.params.paths.windows(2).all(|w| w[0].gain_mag >= w[1].gain_mag));
        prop_assert_eq!(out.params.paths.len(), 5);
        for p in &out.params.paths {
            prop_assert!(p.delay >= 0.0 && p.delay < 64.0);
            prop_assert!(p.aoa >= 0.0 && p.aoa < 2.0 * PI);
        }
        let fitted = ex.objective(&cfr, &out.params);
        prop_assert!((fitted - out.params.residual_energy).abs() <= 1e-8 * cfr.energy());
    }

    #[test]
    fn refinement_never_worsens(d in 0.0f64..60.0, a in 0.0f64..(2.0 * PI), seed in 0u64..1000) {
        let ofdm = OfdmConfig::wifi20();
        let array = ArrayConfig::triangle(0.5);
        let cfr = snapshot(&ofdm, &array, &[(Complex64::new(1.0, 0.0), d, a)], 25.0, seed);
        let ex = Extractor::new(&array, 64, NompConfig::default());
        let coarse = ex.detect_coarse(&cfr);
        let (refined, _) = ex.newton_refine(&cfr, coarse, 10);
        let one = |p: PathEstimate| locnet_core::nomp::ChannelParamSet { paths: vec![p], residual_energy: 0.0 };
        prop_assert!(ex.objective(&cfr, &one(refined)) <= ex.objective(&cfr, &one(coarse)) + 1e-12);
        prop_assert!(wrap_two_pi(refined.aoa) == refined.aoa);
    }
}
