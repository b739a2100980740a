use std::cell::RefCell;

use proptest::prelude::*;

use tsfex_core::clustering::{kmeans_fit, kshape_fit, sbd, KMeansMetric};
use tsfex_core::eval::{evaluate, ndcf, EvalProtocol, TrialRecord};
use tsfex_core::event::Grain;
use tsfex_core::features::{baseline_features, fit_normalizer, normalization_inputs, FeatureMatrix, TxPowerMap};
use tsfex_core::pipeline::synth::generate_event;
use tsfex_core::pipeline::SyntheticSpec;
use tsfex_core::rocket::{apply_kernel, RocketKernel};
use tsfex_core::tuner::{expected_improvement, tune, GpHyper, GpModel, ParamSpec, Scale, SearchSpace, TunerConfig};

fn kernel_strategy() -> impl Strategy<Value = RocketKernel> {
    (
        prop::sample::select(vec![7usize, 9, 11]).prop_flat_map(|len| prop::collection::vec(-2.0f64..2.0, len)),
        1usize..4,
        any::<bool>(),
    )
        .prop_map(|(weights, dilation, padding)| RocketKernel {
            weights,
            bias: 0.0,
            dilation,
            padding: padding || dilation > 2,
        })
}

fn records_strategy() -> impl Strategy<Value = Vec<TrialRecord>> {
    let truths = [1.2, 1.8, 3.0, 4.5];
    prop::collection::vec((any::<bool>(), 0usize..4, 0.3f64..6.0), 1..60).prop_map(move |rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (coarse, t, p))| {
                let grain = if coarse { Grain::Coarse } else { Grain::Fine };
                let truth = if coarse { [1.8, 4.5][t % 2] } else { truths[t] };
                TrialRecord { event_id: format!("e{i}"), grain, true_distance_m: truth, predicted_distance_m: p }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Powers of two keep every product exact, so the sign pattern is exact too.
    #[test]
    fn ppv_survives_positive_rescaling(
        kernel in kernel_strategy(),
        series in prop::collection::vec(-10.0f64..10.0, 40..80),
        exp in -8i32..8,
    ) {
        let c = 2f64.powi(exp);
        let scaled: Vec<f64> = series.iter().map(|v| v * c).collect();
        prop_assert_eq!(apply_kernel(&series, &kernel).unwrap().1, apply_kernel(&scaled, &kernel).unwrap().1);
    }

    #[test]
    fn max_is_additive_in_bias(
        kernel in kernel_strategy(),
        series in prop::collection::vec(-10.0f64..10.0, 40..80),
        bias in -1.0f64..1.0,
    ) {
        let (max0, _) = apply_kernel(&series, &kernel).unwrap();
        let shifted = RocketKernel { bias, ..kernel };
        prop_assert_eq!(apply_kernel(&series, &shifted).unwrap().0, max0 + bias);
    }

    #[test]
    fn sbd_symmetric_and_zero_on_self(pair in (4usize..40).prop_flat_map(|m| (
        prop::collection::vec(-5.0f64..5.0, m),
        prop::collection::vec(-5.0f64..5.0, m),
    ))) {
        let (x, y) = pair;
        prop_assert!(sbd(&x, &x).unwrap().abs() <= 1e-9);
        prop_assert!((sbd(&x, &y).unwrap() - sbd(&y, &x).unwrap()).abs() <= 1e-9);
        let d = sbd(&x, &y).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
    }

    #[test]
    fn cluster_labels_follow_input_permutation(
        data in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 16), 6..14),
        perm_seed in any::<u64>(),
        seed in 0u64..4,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..data.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| data[i].clone()).collect();

        let a = kmeans_fit(&data, 3, seed, 50, KMeansMetric::Euclidean).unwrap();
        let b = kmeans_fit(&permuted, 3, seed, 50, KMeansMetric::Euclidean).unwrap();
        for (rank, &i) in perm.iter().enumerate() {
            prop_assert_eq!(b.assignments[rank], a.assignments[i]);
        }
        let a = kshape_fit(&data, 2, seed, 30).unwrap();
        let b = kshape_fit(&permuted, 2, seed, 30).unwrap();
        for (rank, &i) in perm.iter().enumerate() {
            prop_assert_eq!(b.assignments[rank], a.assignments[i]);
        }
    }

    #[test]
    fn ei_non_negative(mean in -10.0f64..10.0, sd in 0.0f64..5.0, best in -10.0f64..10.0) {
        prop_assert!(expected_improvement(mean, sd, best) >= 0.0);
    }

    #[test]
    fn ei_grows_with_sd_at_incumbent(best in -10.0f64..10.0, sd in 1e-3f64..5.0, extra in 1e-3f64..5.0) {
        prop_assert!(expected_improvement(best, sd + extra, best) > expected_improvement(best, sd, best));
    }

    #[test]
    fn gp_variance_at_observations_is_bounded(
        points in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 2..15),
        length_scale in prop::sample::select(vec![0.05, 0.2, 0.8]),
        noise_var in prop::sample::select(vec![1e-6, 1e-3, 1e-1]),
    ) {
        let x: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0]).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        let gp = GpModel::fit(&x, &y, GpHyper { length_scale, signal_var: 1.0, noise_var }).unwrap();
        for xi in &x {
            let (_, var) = gp.predict(xi);
            // Slack covers cancellation in `signal_var − kᵀK⁻¹k`.
            prop_assert!(var <= noise_var + gp.jitter + 1e-12, "var {} noise {} jitter {}", var, noise_var, gp.jitter);
        }
    }

    #[test]
    fn ndcf_swap_and_scale(pm in 0.0f64..1.0, pf in 0.0f64..1.0, w in 0.1f64..10.0, c in 0.1f64..100.0, w2 in 0.1f64..10.0) {
        prop_assert_eq!(ndcf(pm, pf, w, w), ndcf(pf, pm, w, w));
        let base = ndcf(pm, pf, w, w2);
        prop_assert!((ndcf(pm, pf, c * w, c * w2) - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn trivial_predictors(records in records_strategy(), wm in 0.5f64..4.0, wf in 0.5f64..4.0) {
        let protocol = EvalProtocol { w_miss: wm, w_false: wf, ..EvalProtocol::default() };
        for (pred, want_miss) in [(0.1, false), (100.0, true)] {
            let constant: Vec<TrialRecord> =
                records.iter().map(|r| TrialRecord { predicted_distance_m: pred, ..r.clone() }).collect();
            for c in evaluate(&constant, &protocol).unwrap().columns {
                let (pm, pf) = if want_miss { (1.0, 0.0) } else { (0.0, 1.0) };
                let pm = if c.no_tc4tl { 0.0 } else { pm };
                let pf = if c.no_non_tc4tl { 0.0 } else { pf };
                prop_assert_eq!(c.ndcf, (wm * pm + wf * pf) / wm.min(wf));
            }
        }
    }

    #[test]
    fn evaluate_ignores_record_order(records in records_strategy(), rotate in 0usize..60) {
        let protocol = EvalProtocol::default();
        let mut shuffled = records.clone();
        shuffled.reverse();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        prop_assert_eq!(evaluate(&records, &protocol).unwrap(), evaluate(&shuffled, &protocol).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tuner_stays_in_the_unit_cube(seed in any::<u64>(), budget in 4usize..12) {
        let space = SearchSpace::new(vec![
            ParamSpec::new("depth", 2.0, 8.0, Scale::Linear, true),
            ParamSpec::new("rate", 0.01, 0.3, Scale::Log, false),
        ]).unwrap();
        let seen = RefCell::new(Vec::new());
        let objective = |v: &[f64]| {
            seen.borrow_mut().push(v.to_vec());
            Ok((v[0] - 5.0).powi(2) + (v[1].ln() - 0.1f64.ln()).powi(2))
        };
        let cfg = TunerConfig { budget, n_init: 3, candidate_pool: 64, seed };
        let result = tune(objective, &space, &cfg, &[]).unwrap();
        let seen = seen.into_inner();
        prop_assert_eq!(seen.len(), result.history.len());
        for (t, evaluated) in result.history.iter().zip(&seen) {
            prop_assert!(t.unit.iter().all(|u| (0.0..=1.0).contains(u)));
            prop_assert_eq!(&t.values, evaluated);
            prop_assert_eq!(t.values[0], t.values[0].round());
            // Log-scale round trips through exp/ln, so only the ulp level is exact.
            for (back, v) in space.denormalize(&t.unit).iter().zip(&t.values) {
                prop_assert!((back - v).abs() <= 1e-12 * v.abs(), "{} vs {}", back, v);
            }
        }
    }

    #[test]
    fn baseline_features_are_reproducible(index in 0usize..500, seed in any::<u64>()) {
        let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
        let (event, _) = generate_event(&spec, index).unwrap();
        let (again, _) = generate_event(&spec, index).unwrap();
        let tx = TxPowerMap::default();
        let inputs = normalization_inputs(&event, &tx).unwrap();
        let training = FeatureMatrix::from_vectors(vec![event.id.clone()], &[inputs], None).unwrap();
        let stats = fit_normalizer(&training).unwrap();
        let a = baseline_features(&event, &stats, &tx).unwrap();
        let b = baseline_features(&again, &stats, &tx).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
