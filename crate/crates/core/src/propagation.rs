//! Radio maps: path gain in dB, the dataset's gray-level codec and a
//! desk-scale propagation oracle.
//!
//! The oracle is a log-distance model with a fixed attenuation per meter of
//! the direct ray that runs through buildings. It is synthetic ground truth,
//! not a ray tracer: no reflections, no diffraction.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{CityMap, TxSite, RX_HEIGHT};
use crate::grid::{round_half_away, Grid};
use crate::los::{voxel_ray_oracle, DEFAULT_SAMPLES_PER_METER};
use crate::pgm;

pub const MIN_GAIN_DB: f64 = -111.0;
pub const MAX_GAIN_DB: f64 = -75.0;
pub const GAIN_SPAN_DB: f64 = MAX_GAIN_DB - MIN_GAIN_DB;

/// Path gain in dB per pixel, always within [MIN_GAIN_DB, MAX_GAIN_DB].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioMap(Grid<f64>);

impl RadioMap {
    pub fn new(gains: Grid<f64>) -> Result<Self> {
        if let Some(g) = gains.as_slice().iter().find(|g| !(MIN_GAIN_DB..=MAX_GAIN_DB).contains(*g)) {
            return Err(Error::OutOfRange(format!("path gain {g} dB outside [-111, -75]")));
        }
        Ok(Self(gains))
    }

    /// Clamps every value into range; NaN maps to the floor.
    pub fn clamped(gains: Grid<f64>) -> Self {
        Self(gains.map(|&g| clamp_gain(g)))
    }

    /// Inverse of [`normalize`], clamped.
    pub fn from_normalized(values: &Grid<f64>) -> Self {
        Self(values.map(|&v| clamp_gain(MIN_GAIN_DB + GAIN_SPAN_DB * v)))
    }

    pub fn gains(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn gain_at(&self, x: usize, y: usize) -> f64 {
        *self.0.get(x, y)
    }

    pub fn to_gray(&self) -> Grid<u8> {
        self.0.map(|&g| gain_gray_unchecked(g))
    }

    pub fn from_gray(gray: &Grid<u8>) -> Self {
        Self(gray.map(|&v| gray_to_gain(v)))
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        pgm::write_u8(path, &self.to_gray())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let raster = pgm::read(path)?;
        if raster.maxval != 255 {
            return Err(Error::malformed(path, format!("expected 8-bit REM, maxval {}", raster.maxval)));
        }
        Ok(Self::from_gray(&raster.pixels.map(|&v| v as u8)))
    }
}

fn clamp_gain(g: f64) -> f64 {
    if g.is_nan() {
        MIN_GAIN_DB
    } else {
        g.clamp(MIN_GAIN_DB, MAX_GAIN_DB)
    }
}

fn gain_gray_unchecked(g: f64) -> u8 {
    round_half_away(255.0 * (g - MIN_GAIN_DB) / GAIN_SPAN_DB) as u8
}

pub fn gain_to_gray(g: f64) -> Result<u8> {
    if !(MIN_GAIN_DB..=MAX_GAIN_DB).contains(&g) {
        return Err(Error::OutOfRange(format!("path gain {g} dB outside [-111, -75]")));
    }
    Ok(gain_gray_unchecked(g))
}

pub fn gray_to_gain(v: u8) -> f64 {
    MIN_GAIN_DB + GAIN_SPAN_DB * f64::from(v) / 255.0
}

/// Gains rescaled onto [0, 1] across the 36 dB span.
pub fn normalize(rem: &RadioMap) -> Grid<f64> {
    rem.0.map(|&g| (g - MIN_GAIN_DB) / GAIN_SPAN_DB)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Gain at 1 m.
    pub reference_gain_db: f64,
    pub pathloss_exponent: f64,
    /// Extra loss per meter of the direct ray inside buildings.
    pub blockage_penalty_db: f64,
    pub rx_height: f64,
    pub samples_per_meter: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            reference_gain_db: -46.0,
            pathloss_exponent: 2.2,
            blockage_penalty_db: 1.2,
            rx_height: RX_HEIGHT,
            samples_per_meter: DEFAULT_SAMPLES_PER_METER,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if self.pathloss_exponent.is_nan() || self.pathloss_exponent <= 0.0 {
            return Err(Error::InvalidArgument("pathloss exponent must be positive".into()));
        }
        if self.blockage_penalty_db.is_nan() || self.blockage_penalty_db < 0.0 {
            return Err(Error::InvalidArgument("blockage penalty must be non-negative".into()));
        }
        if self.samples_per_meter.is_nan() || self.samples_per_meter <= 0.0 {
            return Err(Error::InvalidArgument("samples per meter must be positive".into()));
        }
        Ok(())
    }

    /// Unclamped free-space term at 3D distance `d`.
    pub fn distance_gain(&self, d: f64) -> f64 {
        self.reference_gain_db - 10.0 * self.pathloss_exponent * d.max(1.0).log10()
    }
}

/// 3D distance from the transmitter to the receiver above pixel (x, y).
pub fn rx_distance(tx: &TxSite, x: usize, y: usize, rx_height: f64) -> f64 {
    let dx = x as f64 + 0.5 - (tx.x as f64 + 0.5);
    let dy = y as f64 + 0.5 - (tx.y as f64 + 0.5);
    let dz = rx_height - tx.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn oracle_rem(map: &CityMap, tx: &TxSite, params: &PropagationParams) -> Result<RadioMap> {
    params.validate()?;
    if tx.x >= map.width() || tx.y >= map.height() {
        return Err(Error::OutOfRange(format!("transmitter ({}, {}) outside map", tx.x, tx.y)));
    }
    let width = map.width();
    let mut data = vec![0.0; width * map.height()];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, g) in row.iter_mut().enumerate() {
            let d = rx_distance(tx, x, y, params.rx_height);
            let blocked = voxel_ray_oracle(map, tx, (x, y), params.rx_height, params.samples_per_meter).blocked_length;
            *g = clamp_gain(params.distance_gain(d) - params.blockage_penalty_db * blocked);
        }
    });
    Ok(RadioMap(Grid::from_vec(width, map.height(), data)))
}

/// The oracle with the blockage term removed: what a predictor that only
/// knows the distance law would output.
pub fn distance_only_rem(width: usize, height: usize, tx: &TxSite, params: &PropagationParams) -> RadioMap {
    RadioMap(Grid::from_fn(width, height, |x, y| {
        clamp_gain(params.distance_gain(rx_distance(tx, x, y, params.rx_height)))
    }))
}
