//! Access-point switch-on for cell-free networks: pick the sleeping APs with
//! the best predicted path gain at a user location.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{place_transmitters, CityMap, TxSite};
use crate::metrics::ap_selection_error;
use crate::pipeline::{predict, train_masked, train_rem, ModelSpec, Sample, SampleMask, TrainConfig};
use crate::propagation::{oracle_rem, PropagationParams, RadioMap};

/// APs on one map, split into active and sleeping sets by index.
#[derive(Debug, Clone)]
pub struct CfNetwork {
    pub map: Arc<CityMap>,
    pub aps: Vec<TxSite>,
    active: Vec<usize>,
    sleep: Vec<usize>,
}

impl CfNetwork {
    pub fn new(map: Arc<CityMap>, aps: Vec<TxSite>, sleep: Vec<usize>) -> Result<Self> {
        for ap in &aps {
            ap.validate(&map)?;
        }
        let mut sleep = sleep;
        sleep.sort_unstable();
        sleep.dedup();
        if let Some(&bad) = sleep.iter().find(|&&i| i >= aps.len()) {
            return Err(Error::OutOfRange(format!("sleep AP {bad} of {}", aps.len())));
        }
        let active: Vec<usize> = (0..aps.len()).filter(|i| sleep.binary_search(i).is_err()).collect();
        if active.is_empty() {
            return Err(Error::InvalidArgument("at least one AP must stay active".into()));
        }
        Ok(Self { map, aps, active, sleep })
    }

    /// `total` APs on eligible rooftops, `sleeping` of them chosen at random to sleep.
    pub fn random(map: Arc<CityMap>, total: usize, sleeping: usize, seed: u64) -> Result<Self> {
        if sleeping >= total {
            return Err(Error::InvalidArgument(format!("{sleeping} sleeping APs leave none of {total} active")));
        }
        let aps = place_transmitters(&map, total, seed)?;
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xA5)));
        idx.truncate(sleeping);
        Self::new(map, aps, idx)
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn sleep(&self) -> &[usize] {
        &self.sleep
    }
}

/// A user at an outdoor pixel that needs `k_extra` more APs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UeDemand {
    pub x: usize,
    pub y: usize,
    pub k_extra: usize,
}

impl UeDemand {
    pub fn new(map: &CityMap, x: usize, y: usize, k_extra: usize) -> Result<Self> {
        if k_extra == 0 {
            return Err(Error::InvalidArgument("a demand needs at least one extra AP".into()));
        }
        if x >= map.width() || y >= map.height() || !map.is_outdoor(x, y) {
            return Err(Error::InvalidArgument(format!("UE at ({x}, {y}) is not an outdoor pixel")));
        }
        Ok(Self { x, y, k_extra })
    }
}

/// Sleeping APs ordered by gain at the UE (highest first, ties by index); first k_extra.
pub fn mpl_aso_select(net: &CfNetwork, ue: &UeDemand, predicted: &BTreeMap<usize, RadioMap>) -> Result<Vec<usize>> {
    if ue.k_extra > net.sleep.len() {
        return Err(Error::InvalidArgument(format!(
            "{} extra APs requested but only {} sleep",
            ue.k_extra,
            net.sleep.len()
        )));
    }
    let mut ranked = Vec::with_capacity(net.sleep.len());
    for &ap in &net.sleep {
        let rem = predicted.get(&ap).ok_or_else(|| Error::InvalidArgument(format!("no REM for sleeping AP {ap}")))?;
        if ue.x >= rem.width() || ue.y >= rem.height() {
            return Err(Error::OutOfRange(format!("UE ({}, {}) outside REM of AP {ap}", ue.x, ue.y)));
        }
        ranked.push((rem.gain_at(ue.x, ue.y), ap));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(ue.k_extra).map(|(_, ap)| ap).collect())
}

/// Brute-force selection on the true REMs.
pub fn true_topk(net: &CfNetwork, ue: &UeDemand, true_rems: &BTreeMap<usize, RadioMap>) -> Result<Vec<usize>> {
    mpl_aso_select(net, ue, true_rems)
}

/// Expected error of picking k of `sleeping` APs uniformly at random, in percent.
pub fn random_baseline_percent(sleeping: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (sleeping - i) as f64 / (i + 1) as f64;
    }
    100.0 * (1.0 - 1.0 / c)
}

/// Selection error for each k over the given UE locations.
pub fn selection_errors(
    net: &CfNetwork,
    ks: &[usize],
    predicted: &BTreeMap<usize, RadioMap>,
    truth: &BTreeMap<usize, RadioMap>,
    locations: &[(usize, usize)],
) -> Result<Vec<f64>> {
    ks.iter()
        .map(|&k| {
            let pairs = locations
                .par_iter()
                .map(|&(x, y)| {
                    let ue = UeDemand::new(&net.map, x, y, k)?;
                    Ok((true_topk(net, &ue, truth)?, mpl_aso_select(net, &ue, predicted)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (t, e): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            ap_selection_error(&t, &e)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrainingMode {
    FullRem,
    /// Only a random fraction of outdoor pixels is observed.
    Scattered {
        fraction: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsoRow {
    pub k: usize,
    pub error_percent: f64,
    pub random_baseline_percent: f64,
    pub locations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsoReport {
    pub rows: Vec<AsoRow>,
    pub best_val_rmse: f64,
}

impl AsoReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,error_percent,random_baseline_percent,locations\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.k, r.error_percent, r.random_baseline_percent, r.locations));
        }
        s
    }
}

/// Oracle REMs for every AP, keyed by AP index.
pub fn oracle_rems(net: &CfNetwork, params: &PropagationParams) -> Result<BTreeMap<usize, RadioMap>> {
    net.aps.iter().enumerate().map(|(i, ap)| Ok((i, oracle_rem(&net.map, ap, params)?))).collect()
}

/// Trains on active-AP REMs, predicts the sleeping ones and scores the
/// selection against the true REMs for each k.
pub fn evaluate_aso(
    net: &CfNetwork,
    ks: &[usize],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mode: TrainingMode,
    truth: &BTreeMap<usize, RadioMap>,
) -> Result<AsoReport> {
    let sample = |i: usize| -> Result<Sample> {
        let rem = truth.get(&i).ok_or_else(|| Error::InvalidArgument(format!("no true REM for AP {i}")))?;
        Ok(Sample { map_id: format!("ap{i}"), map: net.map.clone(), tx: net.aps[i], rem: rem.clone() })
    };
    let train: Vec<Sample> = net.active.iter().map(|&i| sample(i)).collect::<Result<_>>()?;
    let (model, locations) = match mode {
        TrainingMode::FullRem => (train_rem(&train, spec, cfg)?, net.map.outdoor_pixels()),
        TrainingMode::Scattered { fraction, seed } => {
            let mask = SampleMask::random_outdoor(&net.map, fraction, seed)?;
            (train_masked(&train, &mask, spec, cfg)?, mask.pixels)
        }
    };
    let predicted: BTreeMap<usize, RadioMap> =
        net.sleep.iter().map(|&i| Ok((i, predict(&model, &net.map, &net.aps[i])?))).collect::<Result<_>>()?;
    let errors = selection_errors(net, ks, &predicted, truth, &locations)?;
    let rows = ks
        .iter()
        .zip(errors)
        .map(|(&k, error_percent)| AsoRow {
            k,
            error_percent,
            random_baseline_percent: random_baseline_percent(net.sleep.len(), k),
            locations: locations.len(),
        })
        .collect();
    Ok(AsoReport { rows, best_val_rmse: model.best_val_rmse() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::generate_city;
    use crate::grid::Grid;

    fn three_sleepers() -> (CfNetwork, BTreeMap<usize, RadioMap>) {
        let map = Arc::new(CityMap::empty(4, 4).with_building(0, 0, 1, 1, 6).with_building(3, 3, 1, 1, 6));
        let aps = vec![
            TxSite::on_roof(&map, 0, 0),
            TxSite::on_roof(&map, 3, 3),
            TxSite::on_roof(&map, 0, 0),
            TxSite::on_roof(&map, 3, 3),
        ];
        let net = CfNetwork::new(map, aps, vec![1, 2, 3]).unwrap();
        let gains = [(1, -90.0), (2, -80.0), (3, -100.0)];
        let rems = gains.iter().map(|&(i, g)| (i, RadioMap::new(Grid::filled(4, 4, g)).unwrap())).collect();
        (net, rems)
    }

    #[test]
    fn picks_highest_gains() {
        let (net, rems) = three_sleepers();
        let ue = UeDemand::new(&net.map, 1, 2, 2).unwrap();
        assert_eq!(mpl_aso_select(&net, &ue, &rems).unwrap(), vec![2, 1]);
        let all = UeDemand::new(&net.map, 1, 2, 3).unwrap();
        assert_eq!(mpl_aso_select(&net, &all, &rems).unwrap().len(), 3);
        let too_many = UeDemand { k_extra: 4, ..ue };
        assert!(mpl_aso_select(&net, &too_many, &rems).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let (net, _) = three_sleepers();
        let flat: BTreeMap<usize, RadioMap> =
            [3, 1, 2].iter().map(|&i| (i, RadioMap::new(Grid::filled(4, 4, -90.0)).unwrap())).collect();
        let ue = UeDemand::new(&net.map, 1, 1, 2).unwrap();
        assert_eq!(mpl_aso_select(&net, &ue, &flat).unwrap(), vec![1, 2]);
    }

    #[test]
    fn network_invariants() {
        let map = Arc::new(generate_city(2, 64, 0.3).unwrap());
        let net = CfNetwork::random(map.clone(), 20, 4, 5).unwrap();
        assert_eq!(net.sleep().len(), 4);
        assert_eq!(net.active().len() + net.sleep().len(), 20);
        assert!(net.active().iter().all(|a| !net.sleep().contains(a)));
        let aps = net.aps.clone();
        assert!(CfNetwork::new(map, aps.clone(), (0..aps.len()).collect()).is_err());
    }

    #[test]
    fn baseline_values() {
        assert!((random_baseline_percent(4, 1) - 75.0).abs() < 1e-12);
        assert!((random_baseline_percent(4, 2) - 100.0 * 5.0 / 6.0).abs() < 1e-12);
        assert!((random_baseline_percent(4, 3) - 75.0).abs() < 1e-12);
        assert_eq!(random_baseline_percent(4, 4), 0.0);
    }

    #[test]
    fn perfect_predictions_have_no_error() {
        let map = Arc::new(generate_city(7, 32, 0.3).unwrap());
        let net = CfNetwork::random(map, 8, 4, 1).unwrap();
        let truth = oracle_rems(&net, &PropagationParams::default()).unwrap();
        let errs = selection_errors(&net, &[1, 2, 3], &truth, &truth, &net.map.outdoor_pixels()).unwrap();
        assert_eq!(errs, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn outdoor_demand_only() {
        let map = CityMap::empty(4, 4).with_building(0, 0, 1, 1, 2);
        assert!(UeDemand::new(&map, 0, 0, 1).is_err());
        assert!(UeDemand::new(&map, 1, 0, 0).is_err());
        assert!(UeDemand::new(&map, 1, 0, 1).is_ok());
    }
}
