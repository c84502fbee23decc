//! Fractional line-of-sight maps.
//!
//! Every method returns a [`LosMap`] where 1.0 means the transmitter-receiver
//! ray is completely clear and 0.0 means every sample along it is obstructed.
//!
//! * [`pxlos`] walks a 2D Bresenham line per pixel and interpolates the ray
//!   height at each visited pixel.
//! * [`ablos`] traces 3D Bresenham lines from ground level with one common
//!   step count for the whole map, so every line has the same length and the
//!   pixels can be processed as an order-independent parallel map.
//! * [`voxel_ray_oracle`] samples the exact 3D segment finely. It is the
//!   reference the other two are checked against, and it also supplies the
//!   blocked path length used by the propagation oracle.

use std::path::Path;

use rayon::prelude::*;

use crate::error::Result;
use crate::geo::{CityMap, TxSite};
use crate::grid::{round_half_away, Grid};
use crate::pgm;

pub const DEFAULT_SAMPLES_PER_METER: f64 = 8.0;

pub type LosMap = Grid<f64>;

/// Pixels of the 2D Bresenham line from `from` to `to`, both endpoints
/// included, ordered from `from`. The minor-axis offset at step `k` of `n` is
/// `k * minor / n` rounded half away from zero.
pub fn bresenham_2d(from: (usize, usize), to: (usize, usize)) -> Vec<(usize, usize)> {
    let (x0, y0) = (from.0 as i64, from.1 as i64);
    let (dx, dy) = (to.0 as i64 - x0, to.1 as i64 - y0);
    let (sx, sy) = (dx.signum(), dy.signum());
    let x_drives = dx.abs() >= dy.abs();
    let (major, minor) = if x_drives { (dx.abs(), dy.abs()) } else { (dy.abs(), dx.abs()) };

    let mut out = Vec::with_capacity(major as usize + 1);
    let mut err = major;
    let mut offset = 0i64;
    for k in 0..=major {
        let (x, y) = if x_drives { (x0 + k * sx, y0 + offset * sy) } else { (x0 + offset * sx, y0 + k * sy) };
        out.push((x as usize, y as usize));
        err += 2 * minor;
        if err >= 2 * major {
            err -= 2 * major;
            offset += 1;
        }
    }
    out
}

/// Per-pixel LoS fraction for one receiver pixel.
pub fn pxlos_pixel(map: &CityMap, tx: &TxSite, rx_height: f64, x: usize, y: usize) -> f64 {
    if (x, y) == (tx.x, tx.y) {
        return 1.0;
    }
    let line = bresenham_2d((x, y), (tx.x, tx.y));
    let steps = (line.len() - 1) as f64;
    let obstructed: Vec<bool> = line
        .iter()
        .enumerate()
        .map(|(k, &(px, py))| {
            let z = rx_height + (tx.z - rx_height) * (k as f64 / steps);
            map.height_at(px, py) >= z
        })
        .collect();
    let blocked = obstructed.iter().filter(|&&b| b).count();
    1.0 - blocked as f64 / obstructed.len() as f64
}

/// PxLoS: pixels are processed one after another.
pub fn pxlos(map: &CityMap, tx: &TxSite, rx_height: f64) -> LosMap {
    Grid::from_fn(map.width(), map.height(), |x, y| pxlos_pixel(map, tx, rx_height, x, y))
}

/// Common step count for a map: the largest per-axis distance from any
/// ground cell to the transmitter voxel.
pub fn ablos_step_count(map: &CityMap, tx: &TxSite) -> i64 {
    let tz = tx_voxel_z(tx);
    let xr = (tx.x as i64).max(map.width() as i64 - 1 - tx.x as i64);
    let yr = (tx.y as i64).max(map.height() as i64 - 1 - tx.y as i64);
    xr.max(yr).max(tz)
}

fn tx_voxel_z(tx: &TxSite) -> i64 {
    round_half_away(tx.z) as i64
}

/// Bresenham state along one axis. After `s` steps the offset is
/// `floor((2 * delta * s + len) / (2 * len))`, i.e. `delta * s / len` rounded
/// half up.
struct Axis {
    delta: i64,
    err: i64,
}

impl Axis {
    fn new(delta: i64, len: i64) -> Self {
        Self { delta: delta.abs(), err: len }
    }

    /// Advances one step and reports whether the offset moved.
    #[inline(always)]
    fn advance(&mut self, len: i64) -> bool {
        self.err += 2 * self.delta;
        // delta <= len, so at most one carry per step
        let carry = self.err >= 2 * len;
        if carry {
            self.err -= 2 * len;
        }
        carry
    }
}

/// First step at which the offset reaches `target`.
fn first_step_at(delta: i64, len: i64, target: i64) -> i64 {
    if target <= 0 {
        return 0;
    }
    if delta == 0 {
        return i64::MAX;
    }
    let need = 2 * len * target - len;
    (need + 2 * delta - 1) / (2 * delta)
}

/// Steps before an axis starting at `origin` and moving by `sign` leaves `0..size`.
fn steps_inside(origin: i64, sign: i64, delta: i64, len: i64, size: i64) -> i64 {
    match sign {
        1 => first_step_at(delta, len, size - origin),
        -1 => first_step_at(delta, len, origin + 1),
        _ => i64::MAX,
    }
}

fn ablos_pixel(tops: &Grid<i64>, tx: &TxSite, tz: i64, common: i64, max_top: i64, x: usize, y: usize) -> f64 {
    let (dx, dy) = (tx.x as i64 - x as i64, tx.y as i64 - y as i64);
    let len = dx.abs().max(dy.abs()).max(tz);
    if len == 0 || common == 0 {
        return 1.0;
    }
    let (w, h) = (tops.width() as i64, tops.height() as i64);
    // z never decreases along the line and nothing above the tallest roof
    // blocks, so the walk ends there or where the line leaves the map
    let end = common
        .min(first_step_at(tz, len, max_top))
        .min(steps_inside(x as i64, dx.signum(), dx.abs(), len, w))
        .min(steps_inside(y as i64, dy.signum(), dy.abs(), len, h));
    let (mut ax, mut ay, mut az) = (Axis::new(dx, len), Axis::new(dy, len), Axis::new(tz, len));
    let (step_x, step_y) = (dx.signum() as isize, dy.signum() as isize * w as isize);
    let tops = tops.as_slice();
    let mut idx = (y as i64 * w + x as i64) as isize;
    let mut cz = 0i64;
    let mut hits = 0i64;
    for _ in 0..end {
        hits += i64::from(cz < tops[idx as usize]);
        if ax.advance(len) {
            idx += step_x;
        }
        if ay.advance(len) {
            idx += step_y;
        }
        cz += i64::from(az.advance(len));
    }
    (1.0 - hits as f64 / common as f64).clamp(0.0, 1.0)
}

/// AbLoS: every line starts on the ground (z = 0) and takes the same number of
/// steps, so the result is a pure function of each pixel.
pub fn ablos(map: &CityMap, tx: &TxSite) -> LosMap {
    let tz = tx_voxel_z(tx);
    let common = ablos_step_count(map, tx);
    // voxel z spans [z, z + 1) and is filled when the column is taller than
    // its floor, i.e. for z < ceil(height)
    let tops = map.heights().map(|&h| h.ceil() as i64);
    let max_top = tops.as_slice().iter().copied().max().unwrap_or(0);
    let width = map.width();
    let mut data = vec![0.0; width * map.height()];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = ablos_pixel(&tops, tx, tz, common, max_top, x, y);
        }
    });
    Grid::from_vec(width, map.height(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayBlockage {
    pub blocked_length: f64,
    pub total_length: f64,
    pub blocked_samples: usize,
    pub total_samples: usize,
}

impl RayBlockage {
    pub fn clear_fraction(&self) -> f64 {
        1.0 - self.blocked_samples as f64 / self.total_samples as f64
    }
}

/// Uniform midpoint sampling of the segment from the receiver at the pixel
/// center to the transmitter. A sample is blocked when it lies inside a
/// building column below the roof.
pub fn voxel_ray_oracle(
    map: &CityMap,
    tx: &TxSite,
    pixel: (usize, usize),
    rx_height: f64,
    samples_per_meter: f64,
) -> RayBlockage {
    let a = [pixel.0 as f64 + 0.5, pixel.1 as f64 + 0.5, rx_height];
    let b = [tx.x as f64 + 0.5, tx.y as f64 + 0.5, tx.z];
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let length = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let n = ((length * samples_per_meter).ceil() as usize).max(1);
    let mut blocked = 0usize;
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        let px = a[0] + t * d[0];
        let py = a[1] + t * d[1];
        let pz = a[2] + t * d[2];
        let cx = (px.floor() as usize).min(map.width() - 1);
        let cy = (py.floor() as usize).min(map.height() - 1);
        if pz < map.height_at(cx, cy) {
            blocked += 1;
        }
    }
    RayBlockage {
        blocked_length: length * blocked as f64 / n as f64,
        total_length: length,
        blocked_samples: blocked,
        total_samples: n,
    }
}

/// Clear fraction of the finely sampled ray for every pixel.
pub fn voxel_los(map: &CityMap, tx: &TxSite, rx_height: f64, samples_per_meter: f64) -> LosMap {
    let width = map.width();
    let mut data = vec![0.0; width * map.height()];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = voxel_ray_oracle(map, tx, (x, y), rx_height, samples_per_meter).clear_fraction();
        }
    });
    Grid::from_vec(width, map.height(), data)
}

pub fn los_to_gray(los: &LosMap) -> Grid<u8> {
    los.map(|&f| round_half_away(255.0 * f.clamp(0.0, 1.0)) as u8)
}

pub fn save_los_pgm(path: &Path, los: &LosMap) -> Result<()> {
    pgm::write_u8(path, &los_to_gray(los))
}
