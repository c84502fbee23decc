use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::dihedral_transform;
use super::dataset::{Sample, SampleMask};
use super::input::{assemble_input, InputImages, InputMode};
use super::{density_route, Augmentation, LosInput, LossKind, ModelSpec, NetKind, TrainConfig};
use crate::error::{Error, Result};
use crate::geo::{CityMap, TxSite, RX_HEIGHT};
use crate::grid::Grid;
use crate::los::{ablos, pxlos, LosMap};
use crate::nn::io::{load_params, save_params};
use crate::nn::loss::{gaussian_nll_loss, mse_loss};
use crate::nn::{AdamConfig, AdamState, Tensor, UNetConfig, UNetParams};
use crate::propagation::{normalize, RadioMap};

/// The LoS predictor is always trained at this rate.
pub const NNLOS_LR: f64 = 1e-4;

/// Log-variance below this is treated as this (no gradient), which keeps
/// e^(-s) bounded on near-noiseless pixels.
pub const LOG_VAR_FLOOR: f64 = -12.0;

const SHUFFLE_SALT: u64 = 0x5DEE_CE66_D1CE_5EED;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
}

/// Writes `epoch,train_loss,val_rmse` rows.
pub fn trace_csv(trace: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_rmse\n");
    for e in trace {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_rmse));
    }
    s
}

/// Learned LoS predictor: (Th | Bh) to a LoS map.
#[derive(Debug, Clone)]
pub struct NnLosModel {
    pub params: UNetParams,
    pub trace: Vec<EpochStats>,
}

impl NnLosModel {
    pub fn predict(&self, map: &CityMap, tx: &TxSite) -> Result<LosMap> {
        let input = assemble_input(InputMode::K2, &InputImages::new(map, tx), None)?;
        let out = self.params.forward(&input)?;
        Ok(Grid::from_vec(map.width(), map.height(), out.into_data()).map(|&v| v.clamp(0.0, 1.0)))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub input_mode: InputMode,
    pub params: UNetParams,
    pub nnlos: Option<NnLosModel>,
    pub trace: Vec<EpochStats>,
    /// Effective number of training examples after augmentation.
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainedModel {
    pub fn best_val_rmse(&self) -> f64 {
        self.trace.iter().map(|e| e.val_rmse).fold(f64::INFINITY, f64::min)
    }
}

/// Mean and variance nets trained jointly; only `mean` is used for prediction.
#[derive(Debug, Clone)]
pub struct KlTwin {
    pub model: TrainedModel,
    pub var: UNetParams,
}

impl KlTwin {
    /// Per-pixel predicted log-variance (diagnostic only).
    pub fn log_variance(&self, map: &CityMap, tx: &TxSite) -> Result<Grid<f64>> {
        let input = model_input(&self.model, map, tx)?;
        let out = self.var.forward(&input)?;
        Ok(Grid::from_vec(map.width(), map.height(), out.into_data()))
    }
}

/// The two density-specific models of the routed flow.
#[derive(Debug, Clone)]
pub struct RoutedModel {
    pub ge25: TrainedModel,
    pub lt25: TrainedModel,
}

impl RoutedModel {
    pub fn select(&self, map: &CityMap) -> &TrainedModel {
        match density_route(map) {
            NetKind::UnetGE25 => &self.ge25,
            _ => &self.lt25,
        }
    }

    pub fn predict(&self, map: &CityMap, tx: &TxSite) -> Result<RadioMap> {
        predict(self.select(map), map, tx)
    }
}

struct Prepared {
    input: Tensor,
    target: Tensor,
    mask: Option<Vec<bool>>,
}

fn check_mode(spec: &ModelSpec, mode: InputMode) -> Result<()> {
    match (spec.los, mode.needs_los()) {
        (LosInput::NoLos, true) => {
            Err(Error::InvalidArgument(format!("{spec} has no LoS map but input mode {mode:?} needs one")))
        }
        (LosInput::NoLos, false) => Ok(()),
        (_, false) => Err(Error::InvalidArgument(format!("{spec} computes a LoS map but input mode K2 has no slot"))),
        _ => Ok(()),
    }
}

fn los_map(los: LosInput, nnlos: Option<&NnLosModel>, map: &CityMap, tx: &TxSite) -> Result<Option<LosMap>> {
    Ok(match los {
        LosInput::NoLos => None,
        LosInput::PxLos => Some(pxlos(map, tx, RX_HEIGHT)),
        LosInput::AbLos => Some(ablos(map, tx)),
        LosInput::NnLos => {
            let f =
                nnlos.ok_or_else(|| Error::InvalidArgument("NNLoS model requires a trained LoS predictor".into()))?;
            Some(f.predict(map, tx)?)
        }
    })
}

fn input_for(
    spec: &ModelSpec,
    mode: InputMode,
    nnlos: Option<&NnLosModel>,
    map: &CityMap,
    tx: &TxSite,
) -> Result<Tensor> {
    let lf = los_map(spec.los, nnlos, map, tx)?;
    assemble_input(mode, &InputImages::new(map, tx), lf.as_ref())
}

fn model_input(model: &TrainedModel, map: &CityMap, tx: &TxSite) -> Result<Tensor> {
    input_for(&model.spec, model.input_mode, model.nnlos.as_ref(), map, tx)
}

fn target_tensor(rem: &RadioMap) -> Tensor {
    let g = normalize(rem);
    Tensor::from_vec(&[1, g.height(), g.width()], g.into_vec()).expect("grid shape")
}

/// Sample-level train/validation split. At least one training sample is kept.
/// Training and validation indices for `n` samples, as used by every trainer.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn augment(samples: Vec<Prepared>) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        let mask_t = s.mask.as_ref().map(|m| {
            let (_, h, w) = s.target.dims3().expect("target is 3d");
            Tensor::from_vec(&[1, h, w], m.iter().map(|&b| f64::from(u8::from(b))).collect()).expect("mask shape")
        });
        for t in 0..8 {
            let mask = match &mask_t {
                Some(m) => Some(dihedral_transform(t, m)?.data().iter().map(|&v| v > 0.5).collect()),
                None => None,
            };
            out.push(Prepared {
                input: dihedral_transform(t, &s.input)?,
                target: dihedral_transform(t, &s.target)?,
                mask,
            });
        }
    }
    Ok(out)
}

fn net_config(cfg: &TrainConfig, in_channels: usize) -> UNetConfig {
    UNetConfig { in_channels, depth: cfg.depth, base_channels: cfg.base_channels }
}

/// Normalized RMSE of clamped predictions, over masked pixels if present.
fn evaluate(params: &UNetParams, set: &[Prepared]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in set {
        let out = params.forward(&s.input)?;
        for (i, (p, y)) in out.data().iter().zip(s.target.data()).enumerate() {
            if s.mask.as_ref().is_none_or(|m| m[i]) {
                let r = p.clamp(0.0, 1.0) - y;
                sum += r * r;
                count += 1;
            }
        }
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

fn batches(n: usize, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
    order.shuffle(&mut rng);
    order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
}

/// Minibatch Adam on masked MSE; returns the best-validation parameters.
fn fit_mse(
    train: &[Prepared],
    val: &[Prepared],
    net: UNetConfig,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(UNetParams, Vec<EpochStats>)> {
    let mut params = UNetParams::init(net, cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), &params.tensors);
    let monitor = if val.is_empty() { train } else { val };
    let mut best = (f64::INFINITY, params.clone());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for batch in batches(train.len(), cfg, epoch) {
            let mut grads = params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let s = &train[i];
                let (out, tape) = params.forward_train(&s.input)?;
                let (loss, g) = mse_loss(out.data(), s.target.data(), s.mask.as_deref())?;
                total += loss;
                let dout = Tensor::from_vec(out.shape(), g.into_iter().map(|v| v * scale).collect())?;
                params.backward(&tape, &dout, &mut grads)?;
            }
            adam.step(&mut params.tensors, &grads);
        }
        let val_rmse = evaluate(&params, monitor)?;
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() || !val_rmse.is_finite() {
            return Err(Error::InvalidArgument(format!("training diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_rmse:.6}");
        trace.push(EpochStats { epoch, train_loss, val_rmse });
        if val_rmse < best.0 {
            best = (val_rmse, params.clone());
        }
    }
    Ok((best.1, trace))
}

/// Joint training of the mean and log-variance nets under Gaussian NLL.
fn fit_kl(
    train: &[Prepared],
    val: &[Prepared],
    net: UNetConfig,
    cfg: &TrainConfig,
) -> Result<(UNetParams, UNetParams, Vec<EpochStats>)> {
    let mut mean = UNetParams::init(net, cfg.seed)?;
    let mut var = UNetParams::init(net, cfg.seed.wrapping_add(1))?;
    let mut adam_m = AdamState::new(AdamConfig::with_lr(cfg.lr), &mean.tensors);
    let mut adam_v = AdamState::new(AdamConfig::with_lr(cfg.lr), &var.tensors);
    let monitor = if val.is_empty() { train } else { val };
    let mut best = (f64::INFINITY, mean.clone(), var.clone());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for batch in batches(train.len(), cfg, epoch) {
            let mut gm = mean.zero_grads();
            let mut gv = var.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let s = &train[i];
                let (mu, tape_m) = mean.forward_train(&s.input)?;
                let (lv, tape_v) = var.forward_train(&s.input)?;
                let floored: Vec<f64> = lv.data().iter().map(|&v| v.max(LOG_VAR_FLOOR)).collect();
                let (loss, dmu, mut dlv) = gaussian_nll_loss(mu.data(), &floored, s.target.data(), s.mask.as_deref())?;
                for (d, &raw) in dlv.iter_mut().zip(lv.data()) {
                    if raw < LOG_VAR_FLOOR {
                        *d = 0.0;
                    }
                }
                total += loss;
                let dmu = Tensor::from_vec(mu.shape(), dmu.into_iter().map(|v| v * scale).collect())?;
                let dlv = Tensor::from_vec(lv.shape(), dlv.into_iter().map(|v| v * scale).collect())?;
                mean.backward(&tape_m, &dmu, &mut gm)?;
                var.backward(&tape_v, &dlv, &mut gv)?;
            }
            adam_m.step(&mut mean.tensors, &gm);
            adam_v.step(&mut var.tensors, &gv);
        }
        let val_rmse = evaluate(&mean, monitor)?;
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() || !val_rmse.is_finite() {
            return Err(Error::InvalidArgument(format!("training diverged at epoch {epoch}")));
        }
        trace.push(EpochStats { epoch, train_loss, val_rmse });
        if val_rmse < best.0 {
            best = (val_rmse, mean.clone(), var.clone());
        }
    }
    Ok((best.1, best.2, trace))
}

/// Trains the LoS predictor on pxlos labels.
pub fn train_nnlos(dataset: &[Sample], cfg: &TrainConfig) -> Result<NnLosModel> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no samples to train the LoS predictor on".into()));
    }
    let prepared = dataset
        .par_iter()
        .map(|s| {
            let input = assemble_input(InputMode::K2, &InputImages::new(&s.map, &s.tx), None)?;
            let label = pxlos(&s.map, &s.tx, RX_HEIGHT);
            let target = Tensor::from_vec(&[1, label.height(), label.width()], label.into_vec())?;
            Ok(Prepared { input, target, mask: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let (tr, va) = split_indices(prepared.len(), cfg.val_fraction, cfg.split_seed());
    let (train, val) = partition(prepared, &tr, &va);
    let (params, trace) = fit_mse(&train, &val, net_config(cfg, 2), cfg, NNLOS_LR)?;
    Ok(NnLosModel { params, trace })
}

fn partition(all: Vec<Prepared>, train_idx: &[usize], val_idx: &[usize]) -> (Vec<Prepared>, Vec<Prepared>) {
    let mut slots: Vec<Option<Prepared>> = all.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<Prepared>>, idx: &[usize]| {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect::<Vec<_>>()
    };
    let train = take(&mut slots, train_idx);
    let val = take(&mut slots, val_idx);
    (train, val)
}

struct Setup {
    train: Vec<Prepared>,
    val: Vec<Prepared>,
    nnlos: Option<NnLosModel>,
}

fn setup(dataset: &[Sample], spec: &ModelSpec, cfg: &TrainConfig, mask: Option<&SampleMask>) -> Result<Setup> {
    cfg.validate()?;
    check_mode(spec, cfg.input_mode)?;
    let kept: Vec<&Sample> = match spec.net {
        NetKind::Unet => dataset.iter().collect(),
        net => dataset.iter().filter(|s| density_route(&s.map) == net).collect(),
    };
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("no samples left for {spec}")));
    }
    let bools = match mask {
        Some(m) => {
            for s in &kept {
                if m.width != s.map.width() || m.height != s.map.height() {
                    return Err(Error::ShapeMismatch("mask size differs from a sample map".into()));
                }
            }
            Some(m.to_bools())
        }
        None => None,
    };
    let (tr, va) = split_indices(kept.len(), cfg.val_fraction, cfg.split_seed());
    let nnlos = if spec.los == LosInput::NnLos {
        let subset: Vec<Sample> = tr.iter().map(|&i| kept[i].clone()).collect();
        Some(train_nnlos(&subset, cfg)?)
    } else {
        None
    };
    let prepared = kept
        .par_iter()
        .map(|s| {
            Ok(Prepared {
                input: input_for(spec, cfg.input_mode, nnlos.as_ref(), &s.map, &s.tx)?,
                target: target_tensor(&s.rem),
                mask: bools.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut train, val) = partition(prepared, &tr, &va);
    if spec.aug == Augmentation::DAug {
        train = augment(train)?;
    }
    Ok(Setup { train, val, nnlos })
}

fn train_inner(dataset: &[Sample], spec: &ModelSpec, cfg: &TrainConfig, mask: Option<&SampleMask>) -> Result<KlOrMse> {
    let Setup { train, val, nnlos } = setup(dataset, spec, cfg, mask)?;
    let net = net_config(cfg, cfg.input_mode.channels());
    let (train_size, val_size) = (train.len(), val.len());
    let model = |params, trace| TrainedModel {
        spec: *spec,
        input_mode: cfg.input_mode,
        params,
        nnlos: nnlos.clone(),
        trace,
        train_size,
        val_size,
    };
    Ok(match spec.loss {
        LossKind::Mse => {
            let (params, trace) = fit_mse(&train, &val, net, cfg, cfg.lr)?;
            KlOrMse::Mse(model(params, trace))
        }
        LossKind::Kl => {
            let (mean, var, trace) = fit_kl(&train, &val, net, cfg)?;
            KlOrMse::Kl(KlTwin { model: model(mean, trace), var })
        }
    })
}

enum KlOrMse {
    Mse(TrainedModel),
    Kl(KlTwin),
}

/// Trains the REM model described by `spec`. With a KL loss the variance net
/// is dropped; use [`train_kl`] to keep it.
pub fn train_rem(dataset: &[Sample], spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    Ok(match train_inner(dataset, spec, cfg, None)? {
        KlOrMse::Mse(m) => m,
        KlOrMse::Kl(t) => t.model,
    })
}

pub fn train_kl(dataset: &[Sample], spec: &ModelSpec, cfg: &TrainConfig) -> Result<KlTwin> {
    let spec = ModelSpec { loss: LossKind::Kl, ..*spec };
    match train_inner(dataset, &spec, cfg, None)? {
        KlOrMse::Kl(t) => Ok(t),
        KlOrMse::Mse(_) => unreachable!("loss forced to KL"),
    }
}

/// Loss and validation restricted to the mask's pixels.
pub fn train_masked(
    dataset: &[Sample],
    mask: &SampleMask,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    Ok(match train_inner(dataset, spec, cfg, Some(mask))? {
        KlOrMse::Mse(m) => m,
        KlOrMse::Kl(t) => t.model,
    })
}

/// Trains the >=25% and <25% density models on their halves of the dataset.
pub fn train_routed(dataset: &[Sample], spec: &ModelSpec, cfg: &TrainConfig) -> Result<RoutedModel> {
    let ge25 = train_rem(dataset, &ModelSpec { net: NetKind::UnetGE25, ..*spec }, cfg)?;
    let lt25 = train_rem(dataset, &ModelSpec { net: NetKind::UnetLT25, ..*spec }, cfg)?;
    Ok(RoutedModel { ge25, lt25 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub preprocessing_ms: f64,
    pub forward_ms: f64,
}

pub fn predict(model: &TrainedModel, map: &CityMap, tx: &TxSite) -> Result<RadioMap> {
    predict_timed(model, map, tx).map(|(rem, _)| rem)
}

/// Prediction plus wall time of input assembly (LoS included) and the forward pass.
pub fn predict_timed(model: &TrainedModel, map: &CityMap, tx: &TxSite) -> Result<(RadioMap, StageTimes)> {
    if model.spec.net != NetKind::Unet && density_route(map) != model.spec.net {
        return Err(Error::InvalidArgument(format!(
            "map routes to {:?} but the model is {}",
            density_route(map),
            model.spec
        )));
    }
    tx.validate(map)?;
    let t0 = Instant::now();
    let input = model_input(model, map, tx)?;
    let t1 = Instant::now();
    let out = model.params.forward(&input)?;
    let t2 = Instant::now();
    let normalized = Grid::from_vec(map.width(), map.height(), out.into_data());
    let times =
        StageTimes { preprocessing_ms: (t1 - t0).as_secs_f64() * 1e3, forward_ms: (t2 - t1).as_secs_f64() * 1e3 };
    Ok((RadioMap::from_normalized(&normalized), times))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    spec: ModelSpec,
    input_mode: InputMode,
    trace: Vec<EpochStats>,
    train_size: usize,
    val_size: usize,
}

fn nnlos_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".nnlos");
    PathBuf::from(s)
}

/// Writes the weights to `path`; an NNLoS model also writes `<path>.nnlos`.
pub fn save_model(path: &Path, model: &TrainedModel) -> Result<Vec<PathBuf>> {
    let meta = ModelMeta {
        spec: model.spec,
        input_mode: model.input_mode,
        trace: model.trace.clone(),
        train_size: model.train_size,
        val_size: model.val_size,
    };
    save_params(path, &model.params, &serde_json::to_value(&meta)?)?;
    let mut written = vec![path.to_path_buf()];
    if let Some(f) = &model.nnlos {
        let p = nnlos_path(path);
        save_params(&p, &f.params, &serde_json::json!({ "trace": f.trace }))?;
        written.push(p);
    }
    Ok(written)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let (params, meta) = load_params(path)?;
    let meta: ModelMeta = serde_json::from_value(meta).map_err(|e| Error::malformed(path, e.to_string()))?;
    if params.config.in_channels != meta.input_mode.channels() {
        return Err(Error::malformed(path, "input channels disagree with the stored input mode"));
    }
    let nnlos = if meta.spec.los == LosInput::NnLos {
        let p = nnlos_path(path);
        let (params, m) = load_params(&p)?;
        let trace = serde_json::from_value(m["trace"].clone()).map_err(|e| Error::malformed(&p, e.to_string()))?;
        Some(NnLosModel { params, trace })
    } else {
        None
    };
    Ok(TrainedModel {
        spec: meta.spec,
        input_mode: meta.input_mode,
        params,
        nnlos,
        trace: meta.trace,
        train_size: meta.train_size,
        val_size: meta.val_size,
    })
}
