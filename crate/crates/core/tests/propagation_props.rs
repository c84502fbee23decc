mod common;

use common::random_scene;
use proptest::prelude::*;
use remforge::geo::{CityMap, TxSite};
use remforge::propagation::{
    distance_only_rem, gain_to_gray, gray_to_gain, oracle_rem, PropagationParams, GAIN_SPAN_DB, MAX_GAIN_DB,
    MIN_GAIN_DB,
};

#[test]
fn every_gray_level_round_trips() {
    for v in 0..=255u8 {
        assert_eq!(gain_to_gray(gray_to_gain(v)).unwrap(), v);
    }
    assert_eq!(gain_to_gray(MIN_GAIN_DB).unwrap(), 0);
    assert_eq!(gain_to_gray(MAX_GAIN_DB).unwrap(), 255);
    assert!(gain_to_gray(-111.5).is_err());
}

#[test]
fn open_ground_matches_distance_model() {
    let map = CityMap::empty(32, 32);
    let tx = TxSite::new(16, 16, 10.0);
    let p = PropagationParams::default();
    assert_eq!(oracle_rem(&map, &tx, &p).unwrap(), distance_only_rem(32, 32, &tx, &p));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gray_codec_error_is_bounded(g in MIN_GAIN_DB..=MAX_GAIN_DB) {
        let back = gray_to_gain(gain_to_gray(g).unwrap());
        prop_assert!((back - g).abs() <= GAIN_SPAN_DB / 255.0);
    }

    #[test]
    fn buildings_only_remove_gain(seed in 0u64..400) {
        let (map, tx) = random_scene(seed, 24);
        let p = PropagationParams::default();
        let with = oracle_rem(&map, &tx, &p).unwrap();
        let without = distance_only_rem(24, 24, &tx, &p);
        for (a, b) in with.gains().as_slice().iter().zip(without.gains().as_slice()) {
            prop_assert!(a <= b);
            prop_assert!((MIN_GAIN_DB..=MAX_GAIN_DB).contains(a));
        }
    }

    #[test]
    fn adding_a_building_never_raises_gain(seed in 0u64..400, bx in 0usize..20, by in 0usize..20) {
        let (map, tx) = random_scene(seed, 24);
        let p = PropagationParams::default();
        let before = oracle_rem(&map, &tx, &p).unwrap();
        let mut heights = map.heights().clone();
        for y in by..by + 3 {
            for x in bx..bx + 3 {
                if (x, y) != (tx.x, tx.y) && heights.get(x, y) == &0.0 {
                    heights.set(x, y, 6.6);
                }
            }
        }
        let after = oracle_rem(&CityMap::new(heights).unwrap(), &tx, &p).unwrap();
        for (a, b) in after.gains().as_slice().iter().zip(before.gains().as_slice()) {
            prop_assert!(a <= b);
        }
    }
}
