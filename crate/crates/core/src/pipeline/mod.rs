//! From raw maps to trained models: input assembly, LoS preprocessing,
//! density routing, dihedral-8 augmentation, masked training and the
//! model spec registry.

pub mod augment;
pub mod dataset;
pub mod input;
pub mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{building_density, CityMap};

pub use augment::{dihedral8, dihedral_transform};
pub use dataset::{Dataset, Sample, SampleMask};
pub use input::{assemble_input, InputImages, InputMode};
pub use train::{
    load_model, predict, predict_timed, save_model, split_indices, trace_csv, train_kl, train_masked, train_nnlos,
    train_rem, train_routed, EpochStats, KlTwin, NnLosModel, RoutedModel, StageTimes, TrainedModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Augmentation {
    DAug,
    #[serde(rename = "noDAug")]
    NoDAug,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LosInput {
    #[serde(rename = "noLoS")]
    NoLos,
    #[serde(rename = "PxLoS_f")]
    PxLos,
    #[serde(rename = "AbLoS_f")]
    AbLos,
    #[serde(rename = "NNLoS_f")]
    NnLos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetKind {
    Unet,
    UnetGE25,
    UnetLT25,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "KL")]
    Kl,
}

/// One point of the M(aug, los, net, loss) model grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub aug: Augmentation,
    pub los: LosInput,
    pub net: NetKind,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn new(aug: Augmentation, los: LosInput, net: NetKind, loss: LossKind) -> Self {
        Self { aug, los, net, loss }
    }

    /// M(noDAug, los, Unet, MSE)
    pub fn plain(los: LosInput) -> Self {
        Self::new(Augmentation::NoDAug, los, NetKind::Unet, LossKind::Mse)
    }
}

impl fmt::Display for LosInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LosInput::NoLos => "noLoS",
            LosInput::PxLos => "PxLoS_f",
            LosInput::AbLos => "AbLoS_f",
            LosInput::NnLos => "NNLoS_f",
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let aug = match self.aug {
            Augmentation::DAug => "DAug",
            Augmentation::NoDAug => "noDAug",
        };
        let net = match self.net {
            NetKind::Unet => "Unet",
            NetKind::UnetGE25 => "Unet>=25",
            NetKind::UnetLT25 => "Unet<25",
        };
        let loss = match self.loss {
            LossKind::Mse => "MSE",
            LossKind::Kl => "KL",
        };
        write!(f, "M({aug}, {}, {net}, {loss})", self.los)
    }
}

pub const DENSITY_THRESHOLD: f64 = 0.25;

/// Density at or above 25% goes to the dense-city model.
pub fn density_route(map: &CityMap) -> NetKind {
    if building_density(map) >= DENSITY_THRESHOLD {
        NetKind::UnetGE25
    } else {
        NetKind::UnetLT25
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Seed of the train/validation split; `seed` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    pub val_fraction: f64,
    pub input_mode: InputMode,
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 30,
            batch_size: 4,
            seed: 0,
            split_seed: None,
            val_fraction: 0.2,
            input_mode: InputMode::K3,
            depth: 3,
            base_channels: 16,
        }
    }
}

impl TrainConfig {
    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.depth == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument("epochs, batch size, depth and base channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seed_falls_back_to_seed() {
        let cfg = TrainConfig { seed: 7, ..Default::default() };
        assert_eq!(cfg.split_seed(), 7);
        assert_eq!(TrainConfig { split_seed: Some(2), ..cfg }.split_seed(), 2);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("split_seed"));
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn routing_threshold_is_inclusive() {
        let quarter = CityMap::empty(8, 8).with_building(0, 0, 4, 4, 2);
        assert_eq!(density_route(&quarter), NetKind::UnetGE25);
        assert_eq!(density_route(&CityMap::empty(8, 8)), NetKind::UnetLT25);
        let below = CityMap::empty(8, 8).with_building(0, 0, 3, 5, 2);
        assert_eq!(density_route(&below), NetKind::UnetLT25);
    }

    #[test]
    fn spec_notation() {
        let s = ModelSpec::new(Augmentation::DAug, LosInput::PxLos, NetKind::Unet, LossKind::Mse);
        assert_eq!(s.to_string(), "M(DAug, PxLoS_f, Unet, MSE)");
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"aug":"DAug","los":"PxLoS_f","net":"Unet","loss":"MSE"}"#);
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), s);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { val_fraction: 1.0, ..Default::default() }.validate().is_err());
    }
}
