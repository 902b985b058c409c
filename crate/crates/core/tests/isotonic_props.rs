mod common;

use pacekit_core::isotonic::{aggregate_by_bid, fitted_values, pava, pava_blocks, BidValuePair, MonotoneCurve};
use proptest::prelude::*;

use common::{brute_force_isotonic, pairs};

fn small_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..=5).prop_map(f64::from), n),
            prop::collection::vec((1u8..=4).prop_map(f64::from), n),
        )
    })
}

/// Strictly increasing bids with strictly increasing values.
fn rising_curve() -> impl Strategy<Value = MonotoneCurve> {
    prop::collection::vec((0.01f64..2.0, 0.01f64..5.0), 2..12).prop_map(|steps| {
        let mut b = 0.0;
        let mut v = 0.0;
        let points = steps
            .into_iter()
            .map(|(db, dv)| {
                b += db;
                v += dv;
                BidValuePair::new(b, v)
            })
            .collect();
        MonotoneCurve::from_points(points).unwrap()
    })
}

proptest! {
    #[test]
    fn pava_matches_brute_force((values, weights) in small_instance()) {
        let blocks = pava_blocks(&pairs(&values, &weights)).unwrap();
        let fit = fitted_values(&blocks);
        let expected = brute_force_isotonic(&values, &weights);
        for (a, b) in fit.iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-9, "{fit:?} vs {expected:?}");
        }
    }

    #[test]
    fn pava_output_is_nondecreasing(values in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let weights = vec![1.0; values.len()];
        let curve = pava(&pairs(&values, &weights)).unwrap();
        for w in curve.points().windows(2) {
            prop_assert!(w[0].bid < w[1].bid);
            prop_assert!(w[0].value <= w[1].value);
        }
    }

    #[test]
    fn pava_preserves_weighted_mean(
        values in prop::collection::vec(-50.0f64..50.0, 1..40),
        seed_weights in prop::collection::vec(1.0f64..5.0, 40),
    ) {
        let weights = &seed_weights[..values.len()];
        let curve = pava(&pairs(&values, weights)).unwrap();
        let total_w: f64 = weights.iter().sum();
        let before: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total_w;
        let after: f64 = curve.points().iter().map(|p| p.value * p.weight).sum::<f64>()
            / curve.points().iter().map(|p| p.weight).sum::<f64>();
        prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before.abs()));
    }

    #[test]
    fn pava_is_idempotent(values in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let weights = vec![1.0; values.len()];
        let once = pava(&pairs(&values, &weights)).unwrap();
        let twice = pava(once.points()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn blocks_partition_the_input(values in prop::collection::vec(-50.0f64..50.0, 1..60)) {
        let weights = vec![1.0; values.len()];
        let blocks = pava_blocks(&pairs(&values, &weights)).unwrap();
        prop_assert_eq!(blocks.iter().map(|b| b.len).sum::<usize>(), values.len());
    }

    #[test]
    fn eval_inverts_within_range(curve in rising_curve(), frac in 0.0f64..=1.0) {
        let p = curve.points();
        let (lo, hi) = (p[0].value, p[p.len() - 1].value);
        let t = lo + frac * (hi - lo);
        let b = curve.invert(t).unwrap();
        prop_assert!((curve.eval(b).unwrap() - t).abs() <= 1e-9 * (1.0 + t.abs()));
    }

    #[test]
    fn invert_is_monotone(curve in rising_curve(), a in -2.0f64..80.0, b in -2.0f64..80.0) {
        let (t1, t2) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(curve.invert(t1).unwrap() <= curve.invert(t2).unwrap());
    }

    #[test]
    fn aggregation_restores_strict_order(
        raw in prop::collection::vec(((0u8..6).prop_map(|b| f64::from(b) * 0.5), -5.0f64..5.0), 1..30),
    ) {
        let input: Vec<BidValuePair> = raw.iter().map(|&(b, v)| BidValuePair::new(b, v)).collect();
        let agg = aggregate_by_bid(&input);
        for w in agg.windows(2) {
            prop_assert!(w[0].bid < w[1].bid);
        }
        let total: f64 = agg.iter().map(|p| p.weight).sum();
        prop_assert_eq!(total, input.len() as f64);
        let sum_in: f64 = input.iter().map(|p| p.value).sum();
        let sum_out: f64 = agg.iter().map(|p| p.value * p.weight).sum();
        prop_assert!((sum_in - sum_out).abs() <= 1e-9);
        prop_assert!(pava(&agg).is_ok());
    }
}
