use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{list_bundles, load_bundle, save_bundle, CityMap, MapBundle, TxSite};
use crate::propagation::{oracle_rem, PropagationParams, RadioMap};

/// One training example: a map, one transmitter on it and its REM.
#[derive(Debug, Clone)]
pub struct Sample {
    pub map_id: String,
    pub map: Arc<CityMap>,
    pub tx: TxSite,
    pub rem: RadioMap,
}

pub type Dataset = Vec<Sample>;

/// REM file name for the `i`-th transmitter of a bundle.
pub fn rem_file(i: usize) -> String {
    format!("rem_{i}.pgm")
}

/// Builds oracle samples for every transmitter of every bundle.
pub fn oracle_dataset(bundles: &[MapBundle], params: &PropagationParams) -> Result<Dataset> {
    let mut out = Vec::new();
    for b in bundles {
        let map = Arc::new(b.map.clone());
        for tx in &b.transmitters {
            out.push(Sample {
                map_id: b.map_id.clone(),
                map: map.clone(),
                tx: *tx,
                rem: oracle_rem(&map, tx, params)?,
            });
        }
    }
    Ok(out)
}

/// Writes a bundle together with one 8-bit REM per transmitter.
pub fn save_bundle_with_rems(root: &Path, bundle: &MapBundle, rems: &[RadioMap]) -> Result<()> {
    if rems.len() != bundle.transmitters.len() {
        return Err(Error::InvalidArgument(format!(
            "{} REMs for {} transmitters",
            rems.len(),
            bundle.transmitters.len()
        )));
    }
    let dir = save_bundle(root, bundle)?;
    for (i, rem) in rems.iter().enumerate() {
        rem.save_pgm(&dir.join(rem_file(i)))?;
    }
    Ok(())
}

/// Loads every bundle under `root` with its stored REMs, in bundle-name order.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut out = Vec::new();
    for dir in list_bundles(root)? {
        let bundle = load_bundle(&dir)?;
        let map = Arc::new(bundle.map);
        for (i, tx) in bundle.transmitters.iter().enumerate() {
            let path = dir.join(rem_file(i));
            let rem = RadioMap::load_pgm(&path)?;
            if rem.width() != map.width() || rem.height() != map.height() {
                return Err(Error::malformed(&path, "REM size differs from the height map"));
            }
            out.push(Sample { map_id: bundle.map_id.clone(), map: map.clone(), tx: *tx, rem });
        }
    }
    Ok(out)
}

/// Pixels on which loss and metrics are computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<(usize, usize)>,
}

impl SampleMask {
    /// Rejects pixels inside buildings unless `allow_indoor` is set.
    pub fn new(map: &CityMap, mut pixels: Vec<(usize, usize)>, allow_indoor: bool) -> Result<Self> {
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        for &(x, y) in &pixels {
            if x >= map.width() || y >= map.height() {
                return Err(Error::OutOfRange(format!("mask pixel ({x}, {y}) outside the map")));
            }
            if !allow_indoor && !map.is_outdoor(x, y) {
                return Err(Error::InvalidArgument(format!("mask pixel ({x}, {y}) is inside a building")));
            }
        }
        if pixels.is_empty() {
            return Err(Error::InvalidArgument("mask selects no pixels".into()));
        }
        Ok(Self { width: map.width(), height: map.height(), pixels })
    }

    pub fn outdoor(map: &CityMap) -> Result<Self> {
        Self::new(map, map.outdoor_pixels(), false)
    }

    /// A seeded random subset of the outdoor pixels, at least one.
    pub fn random_outdoor(map: &CityMap, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("mask fraction {fraction} outside (0, 1]")));
        }
        let mut all = map.outdoor_pixels();
        let n = ((all.len() as f64 * fraction).round() as usize).max(1);
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        all.truncate(n);
        Self::new(map, all, false)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        let mut m = vec![false; self.width * self.height];
        for &(x, y) in &self.pixels {
            m[y * self.width + x] = true;
        }
        m
    }
}
