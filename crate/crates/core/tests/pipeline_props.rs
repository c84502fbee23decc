mod common;

use std::collections::HashSet;

use common::random_scene;
use proptest::prelude::*;
use remforge::geo::{building_density, generate_city};
use remforge::nn::Tensor;
use remforge::pipeline::{
    assemble_input, density_route, dihedral8, dihedral_transform, InputImages, InputMode, NetKind,
};

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn pattern(n: usize) -> Tensor {
    Tensor::from_vec(&[1, n, n], (0..n * n).map(|i| i as f64).collect()).unwrap()
}

#[test]
fn asymmetric_pattern_gives_eight_distinct_grids() {
    let t = pattern(4);
    let set: HashSet<Vec<u64>> = (0..8).map(|i| bits(&dihedral_transform(i, &t).unwrap())).collect();
    assert_eq!(set.len(), 8);
    assert_eq!(bits(&dihedral_transform(0, &t).unwrap()), bits(&t));
}

#[test]
fn group_closure() {
    let t = pattern(5);
    let orbit: HashSet<Vec<u64>> = (0..8).map(|i| bits(&dihedral_transform(i, &t).unwrap())).collect();
    for i in 0..8 {
        let img = dihedral_transform(i, &t).unwrap();
        let again: HashSet<Vec<u64>> = (0..8).map(|j| bits(&dihedral_transform(j, &img).unwrap())).collect();
        assert_eq!(again, orbit);
    }
}

#[test]
fn symmetric_input_still_yields_eight() {
    let t = Tensor::from_vec(&[1, 3, 3], vec![1.0, 0.0, 1.0, 0.0, 5.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    let out = dihedral8(&t, &t).unwrap();
    assert_eq!(out.len(), 8);
    let distinct: HashSet<Vec<u64>> = out.iter().map(|(a, _)| bits(a)).collect();
    assert_eq!(distinct.len(), 1);
}

#[test]
fn routes_partition_a_suite() {
    let maps: Vec<_> = (0..30).map(|i| generate_city(i, 32, 0.1 + 0.01 * i as f64).unwrap()).collect();
    let ge: Vec<_> = maps.iter().filter(|m| density_route(m) == NetKind::UnetGE25).collect();
    let lt: Vec<_> = maps.iter().filter(|m| density_route(m) == NetKind::UnetLT25).collect();
    assert_eq!(ge.len() + lt.len(), maps.len());
    assert!(ge.iter().all(|m| building_density(m) >= 0.25));
    assert!(lt.iter().all(|m| building_density(m) < 0.25));
    assert!(!ge.is_empty() && !lt.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transforms_compose_like_d4(i in 0usize..8, j in 0usize..8, n in 2usize..7, seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let t = common::random_tensor(&mut r, &[2, n, n]);
        let ij = dihedral_transform(j, &dihedral_transform(i, &t).unwrap()).unwrap();
        let hits = (0..8).filter(|&k| dihedral_transform(k, &t).unwrap() == ij).count();
        prop_assert!(hits >= 1);
        // every transform is a bijection on pixels
        let mut a: Vec<u64> = bits(&ij);
        let mut b: Vec<u64> = bits(&t);
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn inputs_stay_in_unit_range(seed in 0u64..300) {
        let (map, tx) = random_scene(seed, 16);
        let images = InputImages::new(&map, &tx);
        let lf = remforge::los::pxlos(&map, &tx, 1.5);
        for mode in [InputMode::K2, InputMode::K3, InputMode::K5] {
            let t = assemble_input(mode, &images, Some(&lf)).unwrap();
            prop_assert_eq!(t.shape(), &[mode.channels(), 16, 16][..]);
            prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let nonzero = images.th.as_slice().iter().filter(|&&v| v != 0.0).count();
        prop_assert_eq!(nonzero, 1);
    }
}
