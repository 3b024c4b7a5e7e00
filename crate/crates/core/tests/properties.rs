mod common;

use std::collections::BTreeMap;

use cocompress::heuristic::HeuristicConfig;
use cocompress::io::{read_blob, write_blob};
use cocompress::{
    build_curve, build_curve_trace, compress_layer, compression_rate, conv2d, conv_compressed,
    fit_exponential, importance_bruteforce, importance_fast, load_compressed, plan_rates, realize,
    save_compressed, ApproxState, CompressedEntry, ConvShape, FeatureMap, LayerContext,
    LayerRecord, PlannerConfig, Unit, UnitKinds, WeightTensor,
};
use common::{direct_conv, gaussian, random_tensor, rng, Replica};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;

fn shape_strategy(max_nc: usize, max_k: usize) -> impl Strategy<Value = ConvShape> {
    (1..=max_nc, 1..=max_nc, 1..=max_k).prop_map(|(n, c, k)| ConvShape::new(n, c, k).unwrap())
}

/// A state reached by `steps` random removals, mirrored in a replica.
fn walked_state(shape: ConvShape, seed: u64, keep: usize) -> (WeightTensor, ApproxState, Replica) {
    let mut r = rng(seed);
    let w = random_tensor(&mut r, shape);
    let mut state = ApproxState::new(&w);
    let mut replica = Replica::new(&w);
    let steps = r.random_range(0..shape.unit_count());
    for _ in 0..steps {
        let units = state.remaining_units();
        if units.len() <= keep {
            break;
        }
        let u = *units.choose(&mut r).unwrap();
        state.remove(u).unwrap();
        replica.apply(u);
    }
    (w, state, replica)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_is_a_fraction_and_monotone(
        n in 1usize..300, c in 1usize..300, k in 1usize..6, t1f in 0.0f64..1.0, t2f in 0.0f64..1.0,
    ) {
        let r = n.min(c * k * k);
        let t1 = ((c as f64) * t1f) as usize;
        let t2 = ((r as f64) * t2f) as usize;
        let rate = compression_rate(n, c, k, t1, t2, r);
        prop_assert!(rate <= 1.0 + 1e-15);
        if t2 > 0 && t2 < r {
            prop_assert!(compression_rate(n, c, k, t1, t2 + 1, r) > rate);
            if t1 < c {
                prop_assert!(compression_rate(n, c, k, t1 + 1, t2, r) > rate);
            }
        } else {
            prop_assert!(rate >= 0.0);
        }
        prop_assert_eq!(compression_rate(n, c, k, c, 0, r), 1.0);
        prop_assert_eq!(compression_rate(n, c, k, t1, r, r), 1.0);
    }

    #[test]
    fn state_tracks_from_scratch_replica(shape in shape_strategy(7, 3), seed in any::<u64>()) {
        let (_, state, replica) = walked_state(shape, seed, 0);
        let diff = (state.approx_matrix() - &replica.m).amax();
        prop_assert!(diff <= 1e-9, "approximation drifted by {diff}");
        prop_assert_eq!(state.retained_rank(), replica.retained);
        let area = shape.kernel_area();
        for &ch in state.pruned_channels() {
            prop_assert!(state.approx_matrix().columns(ch * area, area).amax() <= 1e-10);
        }
        prop_assert!((state.svd().reconstruct() - state.approx_matrix()).amax() <= 1e-9);
    }

    #[test]
    fn fast_importance_matches_oracle(shape in shape_strategy(6, 2), seed in any::<u64>(), gamma in 0.0f64..3.0) {
        prop_assume!(shape.unit_count() >= 2);
        let (w, state, replica) = walked_state(shape, seed, 2);
        let g = random_tensor(&mut rng(seed ^ 0x9e37), shape);
        let ctx = LayerContext::new(&w, &g).unwrap();
        let (wm, gm) = (common::matrix(&w), common::matrix(&g));
        for unit in state.remaining_units() {
            let oracle = common::importance(&replica, &wm, &gm, unit, gamma);
            let fast = importance_fast(&state, &ctx, unit, gamma).unwrap();
            let brute = importance_bruteforce(&state, &ctx, unit, gamma).unwrap();
            prop_assert!((fast - oracle).abs() <= 1e-9 * oracle.abs().max(1e-12), "{unit:?}: {fast} vs {oracle}");
            prop_assert!((brute - oracle).abs() <= 1e-9 * oracle.abs().max(1e-12), "{unit:?}: {brute} vs {oracle}");
        }
    }

    #[test]
    fn curve_rates_follow_removal_counts(shape in shape_strategy(6, 3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = random_tensor(&mut r, shape);
        let g = random_tensor(&mut r, shape);
        let trace = build_curve_trace(&w, &g).unwrap();
        prop_assert_eq!(trace.points.len(), shape.unit_count());
        prop_assert_eq!(&trace.points, &build_curve(&w, &g).unwrap());
        let (mut t1, mut t2) = (0, 0);
        for (unit, &(rate, info)) in trace.order.iter().zip(&trace.points) {
            if unit.is_channel() { t1 += 1 } else { t2 += 1 }
            prop_assert_eq!(rate, compression_rate(shape.n, shape.c, shape.k, t1, t2, shape.full_rank()));
            prop_assert!(info >= 0.0);
        }
        let last = trace.points.last().unwrap();
        prop_assert!((last.0 - 1.0).abs() <= 1e-12 && (last.1 - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn fit_ignores_point_order(seed in any::<u64>(), count in 5usize..60) {
        let mut r = rng(seed);
        let mut pts: Vec<(f64, f64)> = (0..count)
            .map(|_| {
                let x: f64 = r.random();
                (x, 0.05 * (3.0 * x).exp() * (1.0 + 0.1 * r.random::<f64>()))
            })
            .collect();
        let before = fit_exponential(&pts).unwrap();
        pts.reverse();
        pts.swap(0, count / 2);
        let after = fit_exponential(&pts).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn planned_rates_share_sensitivity(seed in any::<u64>(), layers in 1usize..10, target in 0.05f64..0.9) {
        let mut r = rng(seed);
        let models: Vec<(f64, f64)> = (0..layers)
            .map(|_| (10f64.powf(r.random_range(-4.0..-1.0)), r.random_range(0.5..12.0)))
            .collect();
        let flops: Vec<f64> = (0..layers).map(|_| 10f64.powf(r.random_range(5.0..9.0))).collect();
        let total: f64 = flops.iter().sum();
        let cfg = PlannerConfig::default();
        let plan = plan_rates(&models, &flops, total, target, &cfg).unwrap();
        prop_assert!((plan.achieved_flops_sum - target * total).abs() <= 100.0);
        for ((&(a, b), &u), (&rate, &clamped)) in models.iter().zip(&plan.unclamped).zip(plan.rates.iter().zip(&plan.clamped)) {
            let s = a * b * (b * u).exp();
            prop_assert!((s - plan.i_bar).abs() <= 1e-9 * plan.i_bar);
            prop_assert!((0.0..=cfg.r_max).contains(&rate));
            prop_assert_eq!(clamped, rate != u);
        }
    }

    #[test]
    fn realized_layer_computes_the_approximation(shape in shape_strategy(6, 3), seed in any::<u64>(), stride in 1usize..3) {
        let (_, state, _) = walked_state(shape, seed, 2);
        prop_assume!(state.t1() < shape.c && state.retained_rank() > 0);
        let layer = realize(&state, "l").unwrap();
        prop_assert!((layer.expand(shape.c) - state.approx_matrix()).amax() <= 1e-9);

        let mut r = rng(seed.wrapping_add(1));
        let (h, w) = (shape.k + r.random_range(0..5), shape.k + r.random_range(0..5));
        let x = FeatureMap::new(shape.c, h, w, gaussian(&mut r, shape.c * h * w)).unwrap();
        let dense = direct_conv(&state.approx(), &x, stride);
        let got = conv_compressed(&layer, &x, stride).unwrap();
        prop_assert!(got.max_abs_diff(&dense) <= 1e-9 * dense.norm().max(1.0));
    }

    #[test]
    fn dense_conv_matches_loop_oracle(shape in shape_strategy(5, 3), seed in any::<u64>(), stride in 1usize..4) {
        let mut r = rng(seed);
        let w = random_tensor(&mut r, shape);
        let (h, wd) = (shape.k + r.random_range(0..6), shape.k + r.random_range(0..6));
        let x = FeatureMap::new(shape.c, h, wd, gaussian(&mut r, shape.c * h * wd)).unwrap();
        let got = conv2d(&w, &x, stride).unwrap();
        let want = direct_conv(&w, &x, stride);
        prop_assert_eq!((got.channels, got.height, got.width), (want.channels, want.height, want.width));
        prop_assert!(got.max_abs_diff(&want) <= 1e-12 * want.norm().max(1.0));
    }

    #[test]
    fn blobs_round_trip_f32_values(values in prop::collection::vec(-1e6f32..1e6, 0..200)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        write_blob(&path, &wide).unwrap();
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len(), 4 * values.len() as u64);
        prop_assert_eq!(read_blob(&path, values.len()).unwrap(), wide);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn compression_reaches_target_with_allowed_units(
        shape in shape_strategy(8, 3), seed in any::<u64>(), target in 0.1f64..0.8, kind in 0usize..3,
    ) {
        prop_assume!(shape.c >= 2 && shape.full_rank() >= 2);
        let kinds = [UnitKinds::Both, UnitKinds::ChannelsOnly, UnitKinds::SingularValuesOnly][kind];
        let mut r = rng(seed);
        let w = random_tensor(&mut r, shape);
        let g = random_tensor(&mut r, shape);
        let cfg = HeuristicConfig { kinds, ..HeuristicConfig::new(target) };
        let (c, r_full) = (shape.c, shape.full_rank());
        let rate = |t1, t2| compression_rate(shape.n, c, shape.k, t1, t2, r_full);
        let pruning_best = (c - 1) as f64 / c as f64;
        let best = match kinds {
            UnitKinds::Both => rate(c - 1, r_full - 1).max(pruning_best),
            UnitKinds::ChannelsOnly => pruning_best,
            UnitKinds::SingularValuesOnly => rate(0, r_full - 1),
        };
        let result = compress_layer(&w, &g, &cfg, "l");
        prop_assert_eq!(result.is_ok(), best >= target, "best reachable {}", best);
        if let Ok(out) = result {
            prop_assert!(out.rate >= target);
            prop_assert!(out.t1 < c);
            prop_assert_eq!(out.layer.param_count(), cocompress::rate::compressed_params(shape, out.t1, out.t2));
            match kinds {
                UnitKinds::ChannelsOnly => prop_assert_eq!(out.t2, 0),
                UnitKinds::SingularValuesOnly => prop_assert_eq!(out.t1, 0),
                UnitKinds::Both => {}
            }
            if out.pruning_fallback {
                prop_assert_eq!(out.t2, 0);
            }
        }
    }
}

#[test]
fn compressed_network_round_trips_through_f32() {
    let mut r = rng(5);
    let shape = ConvShape::new(6, 5, 3).unwrap();
    let w = random_tensor(&mut r, shape);
    let mut state = ApproxState::new(&w);
    state.remove(Unit::Channel(1)).unwrap();
    state.remove(Unit::SingularValue(0)).unwrap();
    let decomposed = realize(&state, "a").unwrap();
    let pruned = realize(&ApproxState::from_pruned(&w, [4]).unwrap(), "b").unwrap();
    let entries = vec![
        CompressedEntry {
            record: LayerRecord::synthetic("a", shape, 1, 4, 4),
            layer: decomposed,
            r_target: 0.3,
        },
        CompressedEntry {
            record: LayerRecord::synthetic("b", shape, 2, 2, 2),
            layer: pruned,
            r_target: 0.2,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c").join("manifest.json");
    save_compressed(&entries, &BTreeMap::new(), &path).unwrap();
    let loaded = load_compressed(&path).unwrap();
    assert_eq!(loaded.entries.len(), 2);
    for (a, b) in entries.iter().zip(&loaded.entries) {
        let shape_of = |r: &LayerRecord| {
            (
                r.name.clone(),
                r.n,
                r.c,
                r.k,
                r.stride,
                r.h_out,
                r.w_out,
                r.compressible,
            )
        };
        assert_eq!(shape_of(&a.record), shape_of(&b.record));
        assert_eq!(a.r_target, b.r_target);
        assert_eq!(a.layer.kept_channels, b.layer.kept_channels);
        let diff = (a.layer.expand(shape.c) - b.layer.expand(shape.c)).amax();
        assert!(diff <= 1e-6, "{diff}");
    }
}
