mod common;

use clar::signal::{
    crop_resize, dtw_distance, dtw_path, haar_analysis, random_crop_resize, sliding_windows, warp_aggregate, CropRange,
};
use common::{brute_dtw, integer_sequences};
use proptest::prelude::*;

#[test]
fn dtw_matches_brute_force_on_short_grid() {
    let seqs: Vec<Vec<f64>> = (1..=3).flat_map(|n| integer_sequences(n, -3, 3)).collect();
    for a in &seqs {
        for b in seqs.iter().step_by(7) {
            assert_eq!(dtw_distance(a, b).unwrap(), brute_dtw(a, b), "{a:?} {b:?}");
        }
    }
}

#[test]
fn dtw_worked_example_and_path_cost() {
    let (a, b) = ([1.0, 2.0, 3.0], [2.0, 3.0]);
    assert_eq!(dtw_distance(&a, &b).unwrap(), 1.0);
    let path = dtw_path(&a, &b).unwrap();
    assert_eq!(path.cost(&a, &b), 1.0);
    assert_eq!(dtw_path(&[1.0], &[5.0, 5.0, 5.0]).unwrap().pairs, vec![(0, 0), (0, 1), (0, 2)]);
}

#[test]
fn warp_aggregate_hand_trace() {
    // Accumulated costs of [0,2,4] vs [4,2,0]:
    //   4 6 6
    //   6 4 6
    //   6 6 8
    // Backtracking from 8 goes through 4 and 4, the diagonal, so each merged
    // point is the mean of a[i] and b[i].
    let (a, b) = ([0.0, 2.0, 4.0], [4.0, 2.0, 0.0]);
    assert_eq!(dtw_path(&a, &b).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
    assert_eq!(dtw_distance(&a, &b).unwrap(), 8.0);
    assert_eq!(warp_aggregate(&a, &b).unwrap(), vec![2.0, 2.0, 2.0]);
    assert_eq!(warp_aggregate(&[0.0, 0.0], &[2.0, 2.0]).unwrap(), vec![1.0, 1.0]);
}

#[test]
fn window_counts_exhaustive() {
    let x: Vec<f64> = (0..64).map(f64::from).collect();
    for l in 1..=64 {
        for h in 1..=l {
            let w = sliding_windows(&x[..l], h).unwrap();
            assert_eq!(w.len(), l - h + 1);
            assert!(w.iter().all(|s| s.len() == h));
        }
        assert!(sliding_windows(&x[..l], l + 1).is_err());
        assert!(sliding_windows(&x[..l], 0).is_err());
    }
    let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(sliding_windows(&x, 3).unwrap()[2], &x[2..5]);
}

#[test]
fn crop_examples() {
    let x = [0.0, 1.0, 2.0, 3.0];
    assert_eq!(crop_resize(&x, 1.0, 0.0, 4).unwrap(), x.to_vec());
    let y = crop_resize(&[0.0, 1.0], 1.0, 0.0, 4).unwrap();
    for (u, v) in y.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
        assert!((u - v).abs() < 1e-15);
    }
    assert!(crop_resize(&x, 0.0, 0.0, 4).is_err());
    assert!(crop_resize(&x, 1.2, 0.0, 4).is_err());
    assert!(crop_resize(&x, 0.5, 1.0, 4).is_err());
    assert!(CropRange { min_fraction: 0.9, max_fraction: 0.6 }.validate().is_err());
}

fn seq(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..max)
}

proptest! {
    #[test]
    fn haar_bands_reconstruct(x in prop::collection::vec(-1e3f64..1e3, 2..256)) {
        let b = haar_analysis(&x).unwrap();
        prop_assert_eq!(b.high.len(), x.len());
        for i in 0..x.len() {
            prop_assert!((b.high[i] + b.low[i] - x[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn dtw_symmetric_and_zero_on_self(a in seq(20), b in seq(20)) {
        prop_assert_eq!(dtw_distance(&a, &b).unwrap(), dtw_distance(&b, &a).unwrap());
        prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn dtw_path_cost_matches_distance(a in seq(24), b in seq(24)) {
        let p = dtw_path(&a, &b).unwrap();
        prop_assert!((p.cost(&a, &b) - dtw_distance(&a, &b).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(p.pairs[0], (0, 0));
        prop_assert_eq!(*p.pairs.last().unwrap(), (a.len() - 1, b.len() - 1));
        for w in p.pairs.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            prop_assert!(di <= 1 && dj <= 1 && di + dj >= 1);
        }
    }

    #[test]
    fn dtw_matches_brute_force_small(a in prop::collection::vec(-3i32..=3, 1..=6), b in prop::collection::vec(-3i32..=3, 1..=6)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        prop_assert_eq!(dtw_distance(&a, &b).unwrap(), brute_dtw(&a, &b));
    }

    #[test]
    fn warp_aggregate_of_self_is_identity(a in seq(40)) {
        let out = warp_aggregate(&a, &a).unwrap();
        for (o, v) in out.iter().zip(&a) {
            prop_assert!((o - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn crops_of_constants_stay_constant(c in -5.0f64..5.0, len in 8usize..64, target in 1usize..64, seed in any::<u64>()) {
        let x = vec![c; len];
        let mut rng = clar::rng::seeded(seed);
        let y = random_crop_resize(&x, &CropRange::default(), target, &mut rng).unwrap();
        prop_assert_eq!(y.len(), target);
        prop_assert!(y.iter().all(|v| (v - c).abs() <= 1e-12));
    }
}
