use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cuffbp_core::evaluate::{bhs_grade, mae_rmse, pearson_r, ErrorSeries};
use cuffbp_core::model::{
    backward, clip_gradient_norm, forward, global_norm, mse, Batch, ModelDims, ModelParams,
};
use cuffbp_core::physio::{analytic_bp_from_pwv, pwv_from_ptt, VesselModel};
use cuffbp_core::preprocess::{select_q, spectrum_peak};
use cuffbp_core::tqwt::{build_q_lookup, decompose, reconstruct, TqwtParams};

fn signal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn series(truth: &[f64], err: &[f64]) -> ErrorSeries {
    ErrorSeries::new(
        truth.iter().zip(err).map(|(t, e)| t + e).collect(),
        truth.to_vec(),
    )
    .unwrap()
}

fn vessel() -> VesselModel {
    VesselModel {
        e0: 1.4e5,
        gamma: 0.017,
        h: 8e-4,
        rho: 1060.0,
        diameter: 3e-3,
        distance: 0.6,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tqwt_reconstructs_exactly(len in 256usize..4096, q in 1.0f64..1.4, j in 1usize..=10, seed in any::<u64>()) {
        let x = signal(len, seed);
        let p = TqwtParams::new(q, 3.0, j).unwrap();
        let y = reconstruct(&decompose(&x, &p).unwrap(), &p).unwrap();
        prop_assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn tqwt_is_linear(len in 256usize..2048, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let p = TqwtParams::new(1.08, 3.0, 6).unwrap();
        let (x, y) = (signal(len, seed), signal(len, seed.wrapping_add(1)));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (dx, dy, dm) = (decompose(&x, &p).unwrap(), decompose(&y, &p).unwrap(), decompose(&mix, &p).unwrap());
        for level in 0..dm.highpass.len() {
            for ((u, v), m) in dx.highpass[level].iter().zip(&dy.highpass[level]).zip(&dm.highpass[level]) {
                prop_assert!((a * u + b * v - m).abs() <= 1e-9);
            }
        }
        for ((u, v), m) in dx.lowpass.iter().zip(&dy.lowpass).zip(&dm.lowpass) {
            prop_assert!((a * u + b * v - m).abs() <= 1e-9);
        }
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(scale in 1e-3f64..1e3, cap in 0.1f64..10.0, seed in any::<u64>()) {
        let dims = ModelDims { input: 3, dense: 2, hidden: 2 };
        let mut g = ModelParams::init(dims, seed);
        g.values_mut().iter_mut().for_each(|v| *v *= scale);
        let before = g.clone();
        let pre = clip_gradient_norm(&mut g, cap);
        prop_assert!((pre - global_norm(&before)).abs() <= 1e-12 * pre.max(1.0));
        if pre <= cap {
            prop_assert_eq!(g.values(), before.values());
        } else {
            prop_assert!((global_norm(&g) - cap).abs() <= 1e-9 * cap);
            let k = cap / pre;
            for (c, b) in g.values().iter().zip(before.values()) {
                prop_assert!((c - k * b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rmse_dominates_mae(errs in prop::collection::vec(-30.0f64..30.0, 1..200)) {
        let truth = vec![120.0; errs.len()];
        let (mae, rmse) = mae_rmse(&series(&truth, &errs)).unwrap();
        prop_assert!(rmse + 1e-12 >= mae);
    }

    #[test]
    fn bhs_ignores_order(errs in prop::collection::vec(-25.0f64..25.0, 2..150), seed in any::<u64>()) {
        let truth: Vec<f64> = (0..errs.len()).map(|i| 80.0 + i as f64).collect();
        let a = bhs_grade(&series(&truth, &errs)).unwrap();
        let mut order: Vec<usize> = (0..errs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let t2: Vec<f64> = order.iter().map(|&i| truth[i]).collect();
        let e2: Vec<f64> = order.iter().map(|&i| errs[i]).collect();
        let b = bhs_grade(&series(&t2, &e2)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pearson_is_affine_invariant(
        errs in prop::collection::vec(-10.0f64..10.0, 3..100),
        k in 0.1f64..10.0,
        c in -50.0f64..50.0,
    ) {
        let truth: Vec<f64> = (0..errs.len()).map(|i| 90.0 + 3.0 * i as f64).collect();
        let s = series(&truth, &errs);
        let Ok(r) = pearson_r(&s) else { return Ok(()) };
        let est: Vec<f64> = s.estimated().iter().map(|e| k * e + c).collect();
        let r2 = pearson_r(&ErrorSeries::new(est, truth).unwrap()).unwrap();
        prop_assert!((r - r2).abs() <= 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
    }

    #[test]
    fn pwv_falls_as_ptt_grows(distance in 0.1f64..1.5, a in 0.05f64..0.5, b in 0.05f64..0.5) {
        prop_assume!(a < b);
        prop_assert!(pwv_from_ptt(distance, a).unwrap() > pwv_from_ptt(distance, b).unwrap());
    }

    #[test]
    fn pressure_inversion_is_monotone_and_exact(p1 in 40.0f64..200.0, p2 in 40.0f64..200.0) {
        prop_assume!(p1 < p2);
        let m = vessel();
        let (c1, c2) = (m.pwv_at(p1), m.pwv_at(p2));
        prop_assert!(c1 < c2);
        prop_assert!((analytic_bp_from_pwv(c1, &m).unwrap() - p1).abs() <= 1e-9);
        prop_assert!(analytic_bp_from_pwv(c1, &m).unwrap() < analytic_bp_from_pwv(c2, &m).unwrap());
    }

    #[test]
    fn q_choice_ignores_amplitude(rate in 1.1f64..3.3, k in 1e-3f64..1e3, seed in any::<u64>()) {
        let fs = 125.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2000)
            .map(|n| {
                let t = n as f64 / fs;
                (2.0 * std::f64::consts::PI * rate * t).sin() + 0.05 * rng.gen_range(-1.0..1.0)
            })
            .collect();
        let scaled: Vec<f64> = x.iter().map(|v| k * v).collect();
        let table = build_q_lookup(fs, 10, 1.0, 1.4, 0.01).unwrap();
        let q1 = select_q(spectrum_peak(&x, fs).unwrap().as_ref(), &table).unwrap();
        let q2 = select_q(spectrum_peak(&scaled, fs).unwrap().as_ref(), &table).unwrap();
        prop_assert_eq!(q1, q2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bptt_matches_central_differences(
        hidden in prop::sample::select(vec![2usize, 4, 8]),
        steps in prop::sample::select(vec![1usize, 2, 4]),
        seed in any::<u64>(),
    ) {
        let dims = ModelDims { input: 4, dense: 3, hidden };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(dims, seed);
        params.values_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        let size = 2;
        let inputs = (0..steps * size * dims.input).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let targets: Vec<f64> = (0..steps * size * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch = Batch::from_raw(steps, size, dims.input, inputs, Some(targets.clone())).unwrap();
        let (_, cache) = forward(&params, &batch).unwrap();
        let (grads, _) = backward(&params, &cache, &targets).unwrap();
        let h = 1e-5;
        for _ in 0..10 {
            let k = rng.gen_range(0..params.len());
            let mut q = params.clone();
            q.values_mut()[k] += h;
            let up = mse(&forward(&q, &batch).unwrap().0, &targets);
            q.values_mut()[k] -= 2.0 * h;
            let down = mse(&forward(&q, &batch).unwrap().0, &targets);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.values()[k];
            let scale = analytic.abs().max(numeric.abs());
            if scale >= 1e-7 {
                prop_assert!((analytic - numeric).abs() / scale <= 1e-5, "coord {}: {} vs {}", k, analytic, numeric);
            } else {
                prop_assert!((analytic - numeric).abs() <= 1e-10);
            }
        }
    }
}
