//! Test-only oracles shared by the integration suites. Nothing here calls the
//! code path it is used to check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remforge::geo::{self, CityMap, TxSite};
use remforge::nn::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), with 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &mut Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let plus = f(x);
        x.data_mut()[i] = orig - h;
        let minus = f(x);
        x.data_mut()[i] = orig;
        g.push((plus - minus) / (2.0 * h));
    }
    g
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Matched-sampling PxLoS reference: the same pixel set and ray heights as the
/// library, but each pixel is located by rounding the exact line position
/// instead of running an error accumulator.
pub fn matched_bresenham_los(map: &CityMap, tx: &TxSite, rx_height: f64, x: usize, y: usize) -> f64 {
    if (x, y) == (tx.x, tx.y) {
        return 1.0;
    }
    let dx = tx.x as i64 - x as i64;
    let dy = tx.y as i64 - y as i64;
    let steps = dx.abs().max(dy.abs());
    let mut blocked = 0usize;
    for k in 0..=steps {
        // (d * k) / steps is correctly rounded, so exact .5 ties stay exact
        let px = x as i64 + ((dx * k) as f64 / steps as f64).round() as i64;
        let py = y as i64 + ((dy * k) as f64 / steps as f64).round() as i64;
        let z = rx_height + (tx.z - rx_height) * (k as f64 / steps as f64);
        if map.height_at(px as usize, py as usize) >= z {
            blocked += 1;
        }
    }
    1.0 - blocked as f64 / (steps + 1) as f64
}

/// Random city with at least one transmitter site; retries densities until
/// one works.
pub fn random_scene(seed: u64, size: usize) -> (CityMap, TxSite) {
    let mut r = rng(seed);
    for attempt in 0..50u64 {
        let density = r.random_range(0.1..0.45);
        if let Ok(map) = geo::generate_city(seed.wrapping_mul(31).wrapping_add(attempt), size, density) {
            if let Ok(sites) = geo::place_transmitters(&map, 1, seed) {
                return (map, sites[0]);
            }
        }
    }
    panic!("no scene for seed {seed}");
}
