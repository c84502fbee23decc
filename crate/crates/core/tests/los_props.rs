mod common;

use common::{matched_bresenham_los, random_scene};
use proptest::prelude::*;
use remforge::geo::{CityMap, TxSite, RX_HEIGHT};
use remforge::los::{ablos, bresenham_2d, pxlos, voxel_los, DEFAULT_SAMPLES_PER_METER};

#[test]
fn pxlos_matches_rounding_oracle_on_random_scenes() {
    for seed in 0..10 {
        let (map, tx) = random_scene(seed, 24);
        let los = pxlos(&map, &tx, RX_HEIGHT);
        for y in 0..24 {
            for x in 0..24 {
                assert_eq!(*los.get(x, y), matched_bresenham_los(&map, &tx, RX_HEIGHT, x, y), "seed {seed} ({x},{y})");
            }
        }
    }
}

#[test]
fn empty_map_is_fully_visible() {
    let map = CityMap::empty(16, 16);
    let tx = TxSite::new(5, 9, 3.0);
    assert!(pxlos(&map, &tx, RX_HEIGHT).as_slice().iter().all(|&v| v == 1.0));
    assert!(ablos(&map, &tx).as_slice().iter().all(|&v| v == 1.0));
}

#[test]
fn ablos_ignores_thread_count() {
    let (map, tx) = random_scene(77, 48);
    let run = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| ablos(&map, &tx));
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(4));
}

#[test]
fn both_methods_track_the_voxel_reference() {
    let mut px_gap = 0.0;
    let mut ab_gap = 0.0;
    let mut n = 0.0;
    for seed in 0..4 {
        let (map, tx) = random_scene(200 + seed, 32);
        let reference = voxel_los(&map, &tx, RX_HEIGHT, DEFAULT_SAMPLES_PER_METER);
        let px = pxlos(&map, &tx, RX_HEIGHT);
        let ab = ablos(&map, &tx);
        for i in 0..reference.len() {
            px_gap += (px.as_slice()[i] - reference.as_slice()[i]).abs();
            ab_gap += (ab.as_slice()[i] - reference.as_slice()[i]).abs();
            n += 1.0;
        }
    }
    assert!(px_gap / n < 0.06, "pxlos vs voxel {}", px_gap / n);
    assert!(ab_gap / n < 0.15, "ablos vs voxel {}", ab_gap / n);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn line_endpoints_and_connectivity(x0 in 0usize..40, y0 in 0usize..40, x1 in 0usize..40, y1 in 0usize..40) {
        let line = bresenham_2d((x0, y0), (x1, y1));
        prop_assert_eq!(line[0], (x0, y0));
        prop_assert_eq!(*line.last().unwrap(), (x1, y1));
        let steps = x0.abs_diff(x1).max(y0.abs_diff(y1));
        prop_assert_eq!(line.len(), steps + 1);
        for w in line.windows(2) {
            prop_assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
        }
    }

    #[test]
    fn los_values_are_fractions(seed in 0u64..500) {
        let (map, tx) = random_scene(seed, 20);
        let px = pxlos(&map, &tx, RX_HEIGHT);
        let ab = ablos(&map, &tx);
        prop_assert_eq!(*px.get(tx.x, tx.y), 1.0);
        prop_assert!(px.as_slice().iter().chain(ab.as_slice()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn raising_the_transmitter_never_hurts_pxlos(seed in 0u64..300, lift in 0.5f64..20.0) {
        let (map, tx) = random_scene(seed, 20);
        let low = pxlos(&map, &tx, RX_HEIGHT);
        let high = pxlos(&map, &TxSite::new(tx.x, tx.y, tx.z + lift), RX_HEIGHT);
        for (a, b) in low.as_slice().iter().zip(high.as_slice()) {
            prop_assert!(b >= a);
        }
    }
}
