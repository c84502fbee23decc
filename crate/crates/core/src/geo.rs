//! City maps, transmitter sites, synthetic layouts and dataset persistence.
//!
//! Heights are story-quantized: a building has 2 to 6 stories of 3.3 m, so
//! every nonzero height lies in [6.6, 19.8] m. Heights are produced from whole
//! decimeters so they survive the 16-bit raster format bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{round_half_away, Grid};
use crate::pgm;

pub const STORY_DM: u16 = 33;
pub const MIN_STORIES: u8 = 2;
pub const MAX_STORIES: u8 = 6;
/// Tallest building in the dataset; also the height quantization reference.
pub const MAX_BUILDING_HEIGHT: f64 = 19.8;
pub const MIN_TX_BUILDING_HEIGHT: f64 = 16.5;
pub const TX_ABOVE_ROOF: f64 = 3.0;
pub const RX_HEIGHT: f64 = 1.5;

const DENSITY_TOLERANCE: f64 = 0.05;
const GENERATION_RETRIES: u64 = 12;

/// Height in meters of a building with `stories` floors.
pub fn story_height(stories: u8) -> f64 {
    f64::from(stories as u16 * STORY_DM) / 10.0
}

fn height_to_decimeters(h: f64) -> Option<u16> {
    if h == 0.0 {
        return Some(0);
    }
    (MIN_STORIES..=MAX_STORIES).map(|s| s as u16 * STORY_DM).find(|&dm| (f64::from(dm) / 10.0 - h).abs() < 1e-9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityMap {
    heights: Grid<f64>,
}

impl CityMap {
    /// Validates that every nonzero height is a whole number of stories.
    pub fn new(heights: Grid<f64>) -> Result<Self> {
        if heights.is_empty() {
            return Err(Error::InvalidArgument("city map must be non-empty".into()));
        }
        let mut heights = heights;
        for h in heights.as_mut_slice() {
            match height_to_decimeters(*h) {
                Some(dm) => *h = f64::from(dm) / 10.0,
                None => return Err(Error::OutOfRange(format!("building height {h} m is not 2-6 stories of 3.3 m"))),
            }
        }
        Ok(Self { heights })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { heights: Grid::filled(width, height, 0.0) }
    }

    /// Places an axis-aligned building, overwriting whatever was there.
    pub fn with_building(mut self, x0: usize, y0: usize, w: usize, h: usize, stories: u8) -> Self {
        assert!((MIN_STORIES..=MAX_STORIES).contains(&stories), "stories out of range");
        let height = story_height(stories);
        for y in y0..(y0 + h).min(self.height()) {
            for x in x0..(x0 + w).min(self.width()) {
                self.heights.set(x, y, height);
            }
        }
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.heights.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.heights.height()
    }

    #[inline]
    pub fn height_at(&self, x: usize, y: usize) -> f64 {
        *self.heights.get(x, y)
    }

    pub fn heights(&self) -> &Grid<f64> {
        &self.heights
    }

    pub fn is_square(&self) -> bool {
        self.width() == self.height()
    }

    pub fn max_height(&self) -> f64 {
        self.heights.as_slice().iter().copied().fold(0.0, f64::max)
    }

    pub fn is_outdoor(&self, x: usize, y: usize) -> bool {
        self.height_at(x, y) == 0.0
    }

    pub fn outdoor_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                if self.is_outdoor(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxSite {
    pub x: usize,
    pub y: usize,
    /// Antenna height above ground in meters.
    #[serde(rename = "z_m")]
    pub z: f64,
}

impl TxSite {
    pub fn new(x: usize, y: usize, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Site on the rooftop of (x, y), `TX_ABOVE_ROOF` above it.
    pub fn on_roof(map: &CityMap, x: usize, y: usize) -> Self {
        Self { x, y, z: map.height_at(x, y) + TX_ABOVE_ROOF }
    }

    /// In bounds and strictly above whatever stands on its pixel.
    pub fn validate(&self, map: &CityMap) -> Result<()> {
        if self.x >= map.width() || self.y >= map.height() {
            return Err(Error::OutOfRange(format!(
                "transmitter ({}, {}) outside {}x{} map",
                self.x,
                self.y,
                map.width(),
                map.height()
            )));
        }
        if !self.z.is_finite() || self.z <= map.height_at(self.x, self.y) {
            return Err(Error::OutOfRange(format!(
                "transmitter height {} m not above rooftop {} m",
                self.z,
                map.height_at(self.x, self.y)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapBundle {
    pub map_id: String,
    pub map: CityMap,
    pub transmitters: Vec<TxSite>,
}

impl MapBundle {
    pub fn new(map_id: impl Into<String>, map: CityMap, transmitters: Vec<TxSite>) -> Result<Self> {
        for tx in &transmitters {
            tx.validate(&map)?;
        }
        Ok(Self { map_id: map_id.into(), map, transmitters })
    }
}

pub fn building_density(map: &CityMap) -> f64 {
    let built = map.heights.as_slice().iter().filter(|&&h| h > 0.0).count();
    built as f64 / map.heights.len() as f64
}

/// B0: 1 on building pixels, 0 elsewhere.
pub fn binary_mask(map: &CityMap) -> Grid<u8> {
    map.heights.map(|&h| u8::from(h > 0.0))
}

/// Bh: ground is 0, buildings map onto [1, 255] relative to 19.8 m.
pub fn height_image(map: &CityMap) -> Grid<u8> {
    map.heights.map(|&h| height_gray(h))
}

pub fn height_gray(h: f64) -> u8 {
    if h <= 0.0 {
        0
    } else {
        round_half_away(255.0 * h / MAX_BUILDING_HEIGHT).clamp(1.0, 255.0) as u8
    }
}

/// Side and offset of the centered transmitter window (150/256 of the map side).
pub fn center_window(side: usize) -> (usize, usize) {
    let win = round_half_away(side as f64 * 150.0 / 256.0) as usize;
    let win = win.clamp(1, side);
    (win, (side - win) / 2)
}

/// Whether a pixel may host a transmitter: tall enough, inside the center
/// window, and on the boundary of its building.
pub fn is_eligible_site(map: &CityMap, x: usize, y: usize) -> bool {
    let h = map.height_at(x, y);
    if h < MIN_TX_BUILDING_HEIGHT {
        return false;
    }
    let (wx, ox) = center_window(map.width());
    let (wy, oy) = center_window(map.height());
    if x < ox || x >= ox + wx || y < oy || y >= oy + wy {
        return false;
    }
    let (xi, yi) = (x as i64, y as i64);
    [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
        let (nx, ny) = (xi + dx, yi + dy);
        !map.heights.in_bounds(nx, ny) || map.height_at(nx as usize, ny as usize) != h
    })
}

pub fn eligible_sites(map: &CityMap) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if is_eligible_site(map, x, y) {
                out.push((x, y));
            }
        }
    }
    out
}

pub fn place_transmitters(map: &CityMap, count: usize, seed: u64) -> Result<Vec<TxSite>> {
    let mut sites = eligible_sites(map);
    if sites.is_empty() {
        return Err(Error::NoEligibleSite(format!(
            "no building of at least {MIN_TX_BUILDING_HEIGHT} m has an edge inside the center window"
        )));
    }
    if count > sites.len() {
        return Err(Error::NoEligibleSite(format!(
            "requested {count} transmitters but only {} eligible edge pixels exist",
            sites.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sites.shuffle(&mut rng);
    Ok(sites.into_iter().take(count).map(|(x, y)| TxSite::on_roof(map, x, y)).collect())
}

/// Random non-overlapping rectangles with uniformly drawn story counts.
pub fn generate_city(seed: u64, size: usize, target_density: f64) -> Result<CityMap> {
    if size < 8 {
        return Err(Error::InvalidArgument(format!("map size {size} below minimum of 8")));
    }
    if !(target_density > 0.0 && target_density < 0.6) {
        return Err(Error::InvalidArgument(format!("target density {target_density} outside (0, 0.6)")));
    }
    let mut best = f64::NAN;
    for attempt in 0..GENERATION_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        // streets between buildings first; dense targets may need touching blocks
        let gap = if attempt < GENERATION_RETRIES / 2 { 1 } else { 0 };
        let map = scatter_buildings(&mut rng, size, target_density, gap);
        let density = building_density(&map);
        if (density - target_density).abs() <= DENSITY_TOLERANCE {
            return Ok(map);
        }
        if best.is_nan() || (density - target_density).abs() < (best - target_density).abs() {
            best = density;
        }
    }
    Err(Error::DensityUnsatisfiable { target: target_density, attempts: GENERATION_RETRIES as usize, best })
}

fn scatter_buildings(rng: &mut ChaCha8Rng, size: usize, target: f64, gap: usize) -> CityMap {
    let total = size * size;
    let target_px = round_half_away(target * total as f64) as usize;
    let min_side = (size / 32).max(1);
    let max_side = (size / 8).max(2);
    let mut occupied = Grid::filled(size, size, false);
    let mut map = CityMap::empty(size, size);
    let mut built = 0usize;
    let max_tries = 400 * total / (min_side * min_side);
    let mut tries = 0;
    while built < target_px && tries < max_tries {
        tries += 1;
        let remaining = target_px - built;
        let mut w = rng.random_range(min_side..=max_side);
        let mut h = rng.random_range(min_side..=max_side);
        // shrink the footprint as the target comes within reach
        while w * h > remaining && (w > 1 || h > 1) {
            if w >= h {
                w -= 1;
            } else {
                h -= 1;
            }
        }
        let x0 = rng.random_range(0..=size - w);
        let y0 = rng.random_range(0..=size - h);
        let (cx0, cy0) = (x0.saturating_sub(gap), y0.saturating_sub(gap));
        let (cx1, cy1) = ((x0 + w + gap).min(size), (y0 + h + gap).min(size));
        let clear = (cy0..cy1).all(|y| (cx0..cx1).all(|x| !*occupied.get(x, y)));
        if !clear {
            continue;
        }
        let stories = rng.random_range(MIN_STORIES..=MAX_STORIES);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                occupied.set(x, y, true);
            }
        }
        map = map.with_building(x0, y0, w, h, stories);
        built += w * h;
    }
    map
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    map_id: String,
    size: usize,
    density: f64,
    transmitters: Vec<TxSite>,
}

pub const HEIGHTS_FILE: &str = "heights.pgm";
pub const META_FILE: &str = "meta.json";

pub fn bundle_dir(root: &Path, map_id: &str) -> PathBuf {
    root.join(map_id)
}

/// Writes `<root>/<map_id>/heights.pgm` and `meta.json`; returns the bundle directory.
pub fn save_bundle(root: &Path, bundle: &MapBundle) -> Result<PathBuf> {
    if !bundle.map.is_square() {
        return Err(Error::InvalidArgument("dataset maps must be square".into()));
    }
    let dir = bundle_dir(root, &bundle.map_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dm = bundle.map.heights.map(|&h| height_to_decimeters(h).expect("validated heights"));
    pgm::write(&dir.join(HEIGHTS_FILE), &dm, u16::MAX)?;
    let meta = BundleMeta {
        map_id: bundle.map_id.clone(),
        size: bundle.map.width(),
        density: building_density(&bundle.map),
        transmitters: bundle.transmitters.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(dir)
}

/// Loads a bundle from its directory (`<root>/<map_id>`).
pub fn load_bundle(dir: &Path) -> Result<MapBundle> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| Error::malformed(&meta_path, e.to_string()))?;
    let heights_path = dir.join(HEIGHTS_FILE);
    let raster = pgm::read(&heights_path)?;
    let (w, h) = (raster.pixels.width(), raster.pixels.height());
    if w != meta.size || h != meta.size {
        return Err(Error::malformed(&heights_path, format!("raster is {w}x{h} but meta declares size {}", meta.size)));
    }
    let mut heights = Vec::with_capacity(w * h);
    for &dm in raster.pixels.as_slice() {
        let ok = dm == 0 || (dm % STORY_DM == 0 && (2..=6).contains(&(dm / STORY_DM)));
        if !ok {
            return Err(Error::malformed(&heights_path, format!("height {dm} dm is not a story multiple")));
        }
        heights.push(f64::from(dm) / 10.0);
    }
    let map = CityMap { heights: Grid::from_vec(w, h, heights) };
    for tx in &meta.transmitters {
        tx.validate(&map).map_err(|e| Error::malformed(&meta_path, e.to_string()))?;
    }
    Ok(MapBundle { map_id: meta.map_id, map, transmitters: meta.transmitters })
}

/// All bundle directories under `root`, sorted by name.
pub fn list_bundles(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_examples() {
        assert_eq!(building_density(&CityMap::empty(8, 8)), 0.0);
        assert_eq!(building_density(&CityMap::empty(8, 8).with_building(0, 0, 8, 8, 3)), 1.0);
        let quarter = CityMap::empty(64, 64).with_building(0, 0, 32, 32, 2);
        assert_eq!(building_density(&quarter), 0.25);
    }

    #[test]
    fn height_gray_levels() {
        assert_eq!(height_gray(19.8), 255);
        assert_eq!(height_gray(0.0), 0);
        // round(255 * 6.6 / 19.8) = round(85.0)
        assert_eq!(height_gray(story_height(2)), 85);
        let img = height_image(&CityMap::empty(4, 4).with_building(1, 1, 2, 2, 6));
        assert_eq!(*img.get(1, 1), 255);
        assert_eq!(*img.get(0, 0), 0);
        let mask = binary_mask(&CityMap::empty(4, 4).with_building(1, 1, 2, 2, 6));
        assert_eq!(mask.as_slice().iter().map(|&v| v as usize).sum::<usize>(), 4);
    }

    #[test]
    fn story_heights_match_literals() {
        assert_eq!(story_height(2), 6.6);
        assert_eq!(story_height(3), 9.9);
        assert_eq!(story_height(5), 16.5);
        assert_eq!(story_height(6), 19.8);
    }

    #[test]
    fn generate_rejects_bad_arguments() {
        assert!(matches!(generate_city(7, 64, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_city(7, 64, 0.6), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_city(7, 4, 0.2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn generate_is_deterministic_and_on_target() {
        let a = generate_city(7, 64, 0.25).unwrap();
        let b = generate_city(7, 64, 0.25).unwrap();
        assert_eq!(a, b);
        let d = building_density(&a);
        assert!((0.20..=0.30).contains(&d), "density {d}");
        assert!(a.heights().as_slice().iter().all(|&h| h == 0.0 || (6.6..=19.8).contains(&h)));
    }

    #[test]
    fn single_tall_building_forces_its_boundary() {
        let map = CityMap::empty(16, 16).with_building(6, 6, 4, 4, 6);
        let sites = place_transmitters(&map, 1, 3).unwrap();
        let s = sites[0];
        assert!((6..10).contains(&s.x) && (6..10).contains(&s.y));
        assert!(s.x == 6 || s.x == 9 || s.y == 6 || s.y == 9);
        assert_eq!(s.z, 22.8);
    }

    #[test]
    fn short_buildings_are_not_eligible() {
        let map = CityMap::empty(16, 16).with_building(6, 6, 4, 4, 4);
        assert!(matches!(place_transmitters(&map, 1, 0), Err(Error::NoEligibleSite(_))));
    }

    #[test]
    fn tall_building_outside_window_is_not_eligible() {
        let map = CityMap::empty(64, 64).with_building(0, 0, 5, 5, 6);
        assert!(eligible_sites(&map).is_empty());
        assert_eq!(center_window(256), (150, 53));
    }

    #[test]
    fn rejects_non_story_heights() {
        let g = Grid::from_vec(2, 1, vec![0.0, 7.0]);
        assert!(CityMap::new(g).is_err());
    }
}
