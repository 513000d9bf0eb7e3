//! Randomized invariants of the regression layer and the rate estimator.

use hjbmc::harness::estimate_rate;
use hjbmc::model::ControlSet;
use hjbmc::regression::{argmax_over_controls, fit, BasisSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Predictions never leave the range of the training targets.
    #[test]
    fn predictions_stay_in_target_range(
        targets in prop::collection::vec(-100.0f64..100.0, 20..60),
        xs_seed in 0u64..1000,
        query in -50.0f64..50.0,
    ) {
        let n = targets.len();
        let grid = ControlSet::interval(-1.0, 1.0, 3).unwrap().grid();
        let mut state = xs_seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        let mut next = || {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
        };
        let xs: Vec<f64> = (0..n).map(|_| next()).collect();
        let regs: Vec<f64> = (0..n).map(|i| grid.point(i % 3)[0]).collect();
        let model = fit(&BasisSpec::per_regime(2), &grid, &xs, 1, &regs, &targets).unwrap();
        let lo = targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for a in grid.iter() {
            let v = model.predict(&[query], a).unwrap();
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "v = {v} outside [{lo}, {hi}]");
        }
    }

    /// Adding a constant to every target shifts predictions and the argmax
    /// value by that constant and leaves the maximizer unchanged.
    #[test]
    fn fit_is_shift_equivariant(
        shift in -50.0f64..50.0,
        seed in 0u64..1000,
    ) {
        let n = 60usize;
        let grid = ControlSet::interval(-1.0, 1.0, 3).unwrap().grid();
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        let xs: Vec<f64> = (0..n).map(|_| next()).collect();
        let regs: Vec<f64> = (0..n).map(|i| grid.point(i % 3)[0]).collect();
        let targets: Vec<f64> = xs.iter().zip(&regs).map(|(x, a)| x + 0.5 * a * x).collect();
        let shifted: Vec<f64> = targets.iter().map(|y| y + shift).collect();
        let base = fit(&BasisSpec::per_regime(1), &grid, &xs, 1, &regs, &targets).unwrap();
        let moved = fit(&BasisSpec::per_regime(1), &grid, &xs, 1, &regs, &shifted).unwrap();
        // query points where the three control slices are strictly ordered
        // (at x = 0 every slice ties and rounding picks the winner)
        for &x in &[-1.0, 0.25, 0.7] {
            let (a0, v0) = argmax_over_controls(&base, &[x], &grid);
            let (a1, v1) = argmax_over_controls(&moved, &[x], &grid);
            prop_assert_eq!(a0, a1);
            prop_assert!((v1 - v0 - shift).abs() <= 1e-7 * (1.0 + shift.abs()));
        }
    }

    /// The log-log slope estimator recovers a planted power law exactly.
    #[test]
    fn rate_estimator_recovers_power_laws(
        slope in 0.1f64..2.5,
        scale in 0.1f64..10.0,
    ) {
        let pairs: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                let h = 0.5f64.powi(i);
                (h, scale * h.powf(slope))
            })
            .collect();
        let est = estimate_rate(&pairs).unwrap();
        prop_assert!((est - slope).abs() <= 1e-9, "est = {est}, slope = {slope}");
    }
}
