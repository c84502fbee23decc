use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use remforge::aso::{evaluate_aso, oracle_rems, CfNetwork, TrainingMode};
use remforge::geo::{binary_mask, generate_city, load_bundle, place_transmitters, MapBundle, TxSite, RX_HEIGHT};
use remforge::grid::Grid;
use remforge::los::{ablos, pxlos, save_los_pgm, LosMap};
use remforge::metrics::{time_ms, EvalReport, TimingReport, TimingRow};
use remforge::nn::io::load_params;
use remforge::pgm;
use remforge::pipeline::dataset::{load_dataset, save_bundle_with_rems, Sample};
use remforge::pipeline::train::{load_model, save_model, trace_csv, NnLosModel, TrainedModel};
use remforge::pipeline::{
    assemble_input, density_route, predict, predict_timed, train_rem, train_routed, Augmentation, InputImages,
    InputMode, LosInput, LossKind, ModelSpec, NetKind, TrainConfig,
};
use remforge::propagation::{normalize, oracle_rem, PropagationParams, RadioMap};
use remforge::CityMap;

use crate::manifest::{hash_outputs, now_ms, RunManifest};
use crate::{Cli, Command, Format, LosMethod};

/// What a command prints: a JSON value and its CSV rendering.
pub struct Summary {
    json: Value,
    csv: String,
}

impl Summary {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self.json).unwrap_or_default() + "\n",
            Format::Csv => self.csv.clone(),
        }
    }
}

struct Outcome {
    summary: Summary,
    out_dir: PathBuf,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<String> {
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, cli);
    }
    let started = now_ms();
    let outcome = dispatch(cli)?;
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        argv: argv.to_vec(),
        cwd: std::env::current_dir()?,
        config_path: outcome.config_path.clone(),
        seed: outcome.seed,
        output_dir: outcome.out_dir.clone(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts: hash_outputs(&outcome.out_dir)?,
    };
    manifest.write()?;
    Ok(outcome.summary.render(cli.global.format))
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen { count, size, density_min, density_max, tx_per_map } => {
            let mut cfg: GenConfig = read_config(g.config.as_deref())?.unwrap_or_default();
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            cfg.count = count.unwrap_or(cfg.count);
            cfg.size = size.unwrap_or(cfg.size);
            cfg.density_min = density_min.unwrap_or(cfg.density_min);
            cfg.density_max = density_max.unwrap_or(cfg.density_max);
            cfg.transmitters_per_map = tx_per_map.unwrap_or(cfg.transmitters_per_map);
            let out = require_out(g.out.as_deref())?;
            let summary = cmd_gen(&cfg, &out)?;
            Ok(Outcome { summary, out_dir: out, config_path: g.config.clone(), seed: Some(cfg.seed) })
        }
        Command::Los { methods, dataset, weights, runs } => {
            let out = require_out(g.out.as_deref())?;
            let summary = cmd_los(methods, dataset, weights.as_deref(), *runs, &out)?;
            Ok(Outcome { summary, out_dir: out, config_path: None, seed: None })
        }
        Command::Train => {
            let path = g.config.as_deref().ok_or_else(|| anyhow!("train needs --config"))?;
            let mut cfg: RunConfig = read_config(Some(path))?.expect("path given");
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.dataset_root = base.join(&cfg.dataset_root);
            cfg.train.seed = g.seed.unwrap_or(cfg.train.seed);
            let out = match (&g.out, &cfg.output_dir) {
                (Some(o), _) => o.clone(),
                (None, Some(o)) => base.join(o),
                (None, None) => bail!("no output directory: set output_dir or --out"),
            };
            let summary = cmd_train(&cfg, &out)?;
            Ok(Outcome { summary, out_dir: out, config_path: Some(path.to_path_buf()), seed: Some(cfg.train.seed) })
        }
        Command::Predict { weights, bundle, tx } => {
            let out = require_out(g.out.as_deref())?;
            let summary = cmd_predict(weights, bundle, *tx, &out)?;
            Ok(Outcome { summary, out_dir: out, config_path: None, seed: None })
        }
        Command::Eval { dataset, weights, predictions, timing_runs } => {
            let out = require_out(g.out.as_deref())?;
            let summary = cmd_eval(dataset, weights, predictions.as_deref(), *timing_runs, &out)?;
            Ok(Outcome { summary, out_dir: out, config_path: None, seed: None })
        }
        Command::Aso => {
            let path = g.config.as_deref().ok_or_else(|| anyhow!("aso needs --config with a scenario"))?;
            let mut sc: AsoScenario = read_config(Some(path))?.expect("path given");
            if let MapSource::Bundle(p) = &sc.map {
                sc.map = MapSource::Bundle(path.parent().unwrap_or(Path::new(".")).join(p));
            }
            sc.train.seed = g.seed.unwrap_or(sc.train.seed);
            let out = require_out(g.out.as_deref())?;
            let summary = cmd_aso(&sc, &out)?;
            Ok(Outcome { summary, out_dir: out, config_path: Some(path.to_path_buf()), seed: Some(sc.train.seed) })
        }
        Command::Export { input, png } => {
            let out = require_out(g.out.as_deref())?;
            let summary = cmd_export(input, *png, &out)?;
            Ok(Outcome { summary, out_dir: out, config_path: None, seed: None })
        }
        Command::Replay { .. } => unreachable!("handled in run"),
    }
}

fn require_out(out: Option<&Path>) -> Result<PathBuf> {
    let out = out.ok_or_else(|| anyhow!("--out is required"))?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn read_config<T: for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<Option<T>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = serde_json::from_str(&text)
        .map_err(|e| remforge::Error::Malformed { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(Some(cfg))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub density_min: f64,
    pub density_max: f64,
    pub transmitters_per_map: usize,
    pub propagation: PropagationParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 10,
            size: 64,
            density_min: 0.1,
            density_max: 0.4,
            transmitters_per_map: 1,
            propagation: PropagationParams::default(),
        }
    }
}

/// Map `i` gets a density evenly spaced over [density_min, density_max].
fn cmd_gen(cfg: &GenConfig, out: &Path) -> Result<Summary> {
    cfg.propagation.validate()?;
    if cfg.count == 0 || !(0.0..=1.0).contains(&cfg.density_min) || !(cfg.density_min..=1.0).contains(&cfg.density_max)
    {
        bail!(remforge::Error::InvalidArgument(
            "count must be positive and 0 <= density_min <= density_max <= 1".into()
        ));
    }
    let mut csv = String::from("map_id,density,transmitters\n");
    let mut maps = Vec::new();
    for i in 0..cfg.count {
        let t = if cfg.count == 1 { 0.5 } else { i as f64 / (cfg.count - 1) as f64 };
        let density = cfg.density_min + (cfg.density_max - cfg.density_min) * t;
        let map_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let map = generate_city(map_seed, cfg.size, density)?;
        let txs = place_transmitters(&map, cfg.transmitters_per_map, map_seed)?;
        let rems = txs.iter().map(|tx| oracle_rem(&map, tx, &cfg.propagation)).collect::<remforge::Result<Vec<_>>>()?;
        let bundle = MapBundle::new(format!("map_{i:04}"), map, txs)?;
        save_bundle_with_rems(out, &bundle, &rems)?;
        let d = remforge::geo::building_density(&bundle.map);
        let _ = writeln!(csv, "{},{d},{}", bundle.map_id, bundle.transmitters.len());
        maps.push(json!({ "map_id": bundle.map_id, "density": d, "transmitters": bundle.transmitters.len() }));
    }
    write_json(&out.join("gen_config.json"), cfg)?;
    Ok(Summary { json: json!({ "command": "gen", "out": out, "maps": maps }), csv })
}

/// Transmitter index of each sample within its bundle.
fn tx_indices(data: &[Sample]) -> Vec<usize> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    data.iter()
        .map(|s| {
            let c = seen.entry(s.map_id.as_str()).or_insert(0);
            *c += 1;
            *c - 1
        })
        .collect()
}

fn load_nnlos(path: &Path) -> Result<NnLosModel> {
    if let Ok(model) = load_model(path) {
        return model.nnlos.ok_or_else(|| anyhow!("{} is not an NNLoS model", path.display()));
    }
    let (params, _) = load_params(path)?;
    Ok(NnLosModel { params, trace: Vec::new() })
}

fn method_name(m: LosMethod) -> &'static str {
    match m {
        LosMethod::Px => "px",
        LosMethod::Ab => "ab",
        LosMethod::Nn => "nn",
    }
}

fn cmd_los(methods: &[LosMethod], dataset: &Path, weights: Option<&Path>, runs: usize, out: &Path) -> Result<Summary> {
    let data = load_dataset(dataset)?;
    if data.is_empty() {
        bail!(remforge::Error::EmptyDataset(format!("no samples under {}", dataset.display())));
    }
    let nnlos = match (methods.contains(&LosMethod::Nn), weights) {
        (true, Some(w)) => Some(load_nnlos(w)?),
        (true, None) => bail!(remforge::Error::InvalidArgument("--method nn needs --weights".into())),
        _ => None,
    };
    let idx = tx_indices(&data);
    let runs = runs.max(1);
    let mut report = TimingReport::default();
    let mut seen = Vec::new();
    for &m in methods {
        if seen.contains(&m) {
            continue;
        }
        seen.push(m);
        let (mut pre, mut fwd) = (Vec::new(), Vec::new());
        for (s, &i) in data.iter().zip(&idx) {
            let los: LosMap = match m {
                LosMethod::Px => {
                    pre.extend(time_ms(1, runs, || pxlos(&s.map, &s.tx, RX_HEIGHT))?);
                    fwd.extend(std::iter::repeat_n(0.0, runs));
                    pxlos(&s.map, &s.tx, RX_HEIGHT)
                }
                LosMethod::Ab => {
                    pre.extend(time_ms(1, runs, || ablos(&s.map, &s.tx))?);
                    fwd.extend(std::iter::repeat_n(0.0, runs));
                    ablos(&s.map, &s.tx)
                }
                LosMethod::Nn => {
                    let f = nnlos.as_ref().expect("loaded above");
                    let assemble = || assemble_input(InputMode::K2, &InputImages::new(&s.map, &s.tx), None);
                    pre.extend(time_ms(1, runs, assemble)?);
                    let input = assemble()?;
                    fwd.extend(time_ms(1, runs, || f.params.forward(&input))?);
                    f.predict(&s.map, &s.tx)?
                }
            };
            let dir = out.join(&s.map_id);
            fs::create_dir_all(&dir)?;
            save_los_pgm(&dir.join(format!("los_{}_{i}.pgm", method_name(m))), &los)?;
        }
        report.rows.push(TimingRow::from_runs(method_name(m), &pre, &fwd)?);
    }
    write_text(&out.join("timing.csv"), &report.to_csv())?;
    Ok(Summary { json: json!({ "command": "los", "samples": data.len(), "timing": report }), csv: report.to_csv() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub dataset_root: PathBuf,
    pub output_dir: Option<PathBuf>,
    /// Train the >=25% and <25% density models instead of one.
    pub density_routed: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: ModelSpec::plain(LosInput::PxLos),
            train: TrainConfig::default(),
            dataset_root: PathBuf::from("dataset"),
            output_dir: None,
            density_routed: false,
        }
    }
}

fn model_summary(m: &TrainedModel) -> Value {
    json!({
        "spec": m.spec.to_string(),
        "best_val_rmse": m.best_val_rmse(),
        "train_size": m.train_size,
        "val_size": m.val_size,
        "epochs": m.trace.len(),
    })
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let data = load_dataset(&cfg.dataset_root)?;
    fs::create_dir_all(out)?;
    let mut models = Vec::new();
    let mut csv = String::from("model,spec,best_val_rmse,train_size,val_size\n");
    let trained: Vec<(&str, TrainedModel)> = if cfg.density_routed {
        let r = train_routed(&data, &cfg.spec, &cfg.train)?;
        vec![("ge25", r.ge25), ("lt25", r.lt25)]
    } else {
        vec![("", train_rem(&data, &cfg.spec, &cfg.train)?)]
    };
    for (tag, m) in &trained {
        let suffix = if tag.is_empty() { String::new() } else { format!("_{tag}") };
        save_model(&out.join(format!("model{suffix}.remu")), m)?;
        write_text(&out.join(format!("trace{suffix}.csv")), &trace_csv(&m.trace))?;
        let _ = writeln!(csv, "model{suffix},{},{},{},{}", m.spec, m.best_val_rmse(), m.train_size, m.val_size);
        models.push(model_summary(m));
    }
    let summary = json!({ "command": "train", "config": cfg, "models": models });
    write_json(&out.join("train_summary.json"), &summary)?;
    Ok(Summary { json: summary, csv })
}

/// A general model serves any map; density models only their own route.
fn pick_model<'a>(models: &'a [TrainedModel], map: &CityMap) -> Result<&'a TrainedModel> {
    let route = density_route(map);
    models
        .iter()
        .find(|m| m.spec.net == route)
        .or_else(|| models.iter().find(|m| m.spec.net == NetKind::Unet))
        .ok_or_else(|| anyhow!("no model for a map routed to {route:?}"))
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<TrainedModel>> {
    paths.iter().map(|p| load_model(p).with_context(|| format!("loading {}", p.display()))).collect()
}

fn cmd_predict(weights: &[PathBuf], bundle_dir: &Path, tx: usize, out: &Path) -> Result<Summary> {
    let models = load_models(weights)?;
    let bundle = load_bundle(bundle_dir)?;
    let site = *bundle
        .transmitters
        .get(tx)
        .ok_or_else(|| remforge::Error::OutOfRange(format!("bundle has {} transmitters", bundle.transmitters.len())))?;
    let model = pick_model(&models, &bundle.map)?;
    let rem = predict(model, &bundle.map, &site)?;
    rem.save_pgm(&out.join("prediction.pgm"))?;
    let g = rem.gains().as_slice();
    let stats = json!({
        "map_id": bundle.map_id,
        "tx_index": tx,
        "model": model.spec.to_string(),
        "min_db": g.iter().copied().fold(f64::INFINITY, f64::min),
        "max_db": g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "mean_db": g.iter().sum::<f64>() / g.len() as f64,
    });
    write_json(&out.join("prediction.json"), &stats)?;
    let csv = format!(
        "map_id,tx_index,model,min_db,max_db,mean_db\n{},{tx},{},{},{},{}\n",
        stats["map_id"].as_str().unwrap_or_default(),
        model.spec,
        stats["min_db"],
        stats["max_db"],
        stats["mean_db"]
    );
    Ok(Summary { json: stats, csv })
}

fn cmd_eval(
    dataset: &Path,
    weights: &[PathBuf],
    predictions: Option<&Path>,
    runs: usize,
    out: &Path,
) -> Result<Summary> {
    let data = load_dataset(dataset)?;
    let idx = tx_indices(&data);
    let mut timing = None;
    let preds: Vec<RadioMap> = match predictions {
        Some(dir) => {
            let stored = load_dataset(dir)?;
            if stored.len() != data.len() || stored.iter().zip(&data).any(|(a, b)| a.map_id != b.map_id || a.tx != b.tx)
            {
                bail!(remforge::Error::ShapeMismatch("prediction directory does not match the dataset layout".into()));
            }
            stored.into_iter().map(|s| s.rem).collect()
        }
        None if weights.is_empty() => bail!("eval needs --weights or --predictions"),
        None => {
            let models = load_models(weights)?;
            let mut per_model: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
            let mut preds = Vec::with_capacity(data.len());
            for s in &data {
                let model = pick_model(&models, &s.map)?;
                let name = model.spec.to_string();
                let slot = match per_model.iter().position(|(n, _, _)| *n == name) {
                    Some(p) => p,
                    None => {
                        per_model.push((name, Vec::new(), Vec::new()));
                        per_model.len() - 1
                    }
                };
                let mut last = None;
                for _ in 0..runs.max(1) {
                    let (rem, t) = predict_timed(model, &s.map, &s.tx)?;
                    per_model[slot].1.push(t.preprocessing_ms);
                    per_model[slot].2.push(t.forward_ms);
                    last = Some(rem);
                }
                preds.push(last.expect("at least one run"));
            }
            let rows = per_model
                .iter()
                .map(|(n, p, f)| TimingRow::from_runs(n.clone(), p, f))
                .collect::<remforge::Result<Vec<_>>>()?;
            timing = Some(TimingReport { rows });
            preds
        }
    };
    let ys: Vec<Grid<f64>> = data.iter().map(|s| normalize(&s.rem)).collect();
    let ps: Vec<Grid<f64>> = preds.iter().map(normalize).collect();
    let buildings: Vec<Grid<u8>> = data.iter().map(|s| binary_mask(&s.map)).collect();
    let ids = data.iter().zip(&idx).map(|(s, &i)| (s.map_id.clone(), i)).collect();
    let report = EvalReport::score(ids, &ys, &ps, &buildings)?;
    write_json(&out.join("eval_report.json"), &report)?;
    write_text(&out.join("eval_report.csv"), &report.to_csv())?;
    let mut json = serde_json::to_value(&report)?;
    if let Some(t) = &timing {
        write_text(&out.join("timing.csv"), &t.to_csv())?;
        json["timing"] = serde_json::to_value(t)?;
        log::info!("\n{}", t.to_table());
    }
    Ok(Summary { json, csv: report.to_csv() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Bundle(PathBuf),
    Generate { seed: u64, size: usize, density: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApSource {
    Random { total: usize, sleeping: usize, seed: u64 },
    Explicit { sites: Vec<TxSite>, sleep: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AsoScenario {
    pub map: MapSource,
    pub aps: ApSource,
    pub ks: Vec<usize>,
    pub training_mode: TrainingMode,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub propagation: PropagationParams,
}

impl Default for AsoScenario {
    fn default() -> Self {
        Self {
            map: MapSource::Generate { seed: 0, size: 64, density: 0.3 },
            aps: ApSource::Random { total: 20, sleeping: 4, seed: 0 },
            ks: vec![1, 2, 3],
            training_mode: TrainingMode::FullRem,
            spec: ModelSpec::new(Augmentation::DAug, LosInput::PxLos, NetKind::Unet, LossKind::Mse),
            train: TrainConfig::default(),
            propagation: PropagationParams::default(),
        }
    }
}

fn cmd_aso(sc: &AsoScenario, out: &Path) -> Result<Summary> {
    let map = match &sc.map {
        MapSource::Bundle(dir) => load_bundle(dir)?.map,
        MapSource::Generate { seed, size, density } => generate_city(*seed, *size, *density)?,
    };
    let map = std::sync::Arc::new(map);
    let net = match &sc.aps {
        ApSource::Random { total, sleeping, seed } => CfNetwork::random(map, *total, *sleeping, *seed)?,
        ApSource::Explicit { sites, sleep } => CfNetwork::new(map, sites.clone(), sleep.clone())?,
    };
    let truth = oracle_rems(&net, &sc.propagation)?;
    let report = evaluate_aso(&net, &sc.ks, &sc.spec, &sc.train, sc.training_mode, &truth)?;
    write_json(&out.join("aso_report.json"), &report)?;
    write_text(&out.join("aso_report.csv"), &report.to_csv())?;
    Ok(Summary { json: serde_json::to_value(&report)?, csv: report.to_csv() })
}

/// 16-bit rasters are stretched so their largest sample maps to 255.
fn to_gray8(raster: &pgm::Pgm) -> Grid<u8> {
    if raster.maxval <= 255 {
        return raster.pixels.map(|&v| v as u8);
    }
    let top = f64::from(raster.pixels.as_slice().iter().copied().max().unwrap_or(0).max(1));
    raster.pixels.map(|&v| (255.0 * f64::from(v) / top).round() as u8)
}

fn cmd_export(input: &Path, png: bool, out: &Path) -> Result<Summary> {
    let raster = pgm::read(input)?;
    let gray = to_gray8(&raster);
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("raster");
    let target = if png {
        let p = out.join(format!("{stem}.png"));
        let img = image::GrayImage::from_raw(gray.width() as u32, gray.height() as u32, gray.as_slice().to_vec())
            .ok_or_else(|| anyhow!("raster buffer size mismatch"))?;
        img.save_with_format(&p, image::ImageFormat::Png).with_context(|| format!("writing {}", p.display()))?;
        p
    } else {
        let p = out.join(format!("{stem}.pgm"));
        pgm::write_u8(&p, &gray)?;
        p
    };
    let json = json!({ "command": "export", "input": input, "output": target, "width": gray.width(), "height": gray.height() });
    Ok(Summary { csv: format!("input,output\n{},{}\n", input.display(), target.display()), json })
}

fn replace_out(argv: &[String], out: &Path) -> Vec<String> {
    let mut v = Vec::with_capacity(argv.len() + 2);
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            v.push(a.clone());
        }
    }
    v.push("--out".into());
    v.push(out.display().to_string());
    v
}

fn replay(manifest_path: &Path, outer: &Cli) -> Result<String> {
    use clap::Parser;
    let old = RunManifest::read(manifest_path)?;
    if old.command == "replay" {
        bail!("a replay manifest cannot be replayed");
    }
    std::env::set_current_dir(&old.cwd).with_context(|| format!("entering {}", old.cwd.display()))?;
    let argv = match &outer.global.out {
        Some(o) => replace_out(&old.argv, o),
        None => old.argv.clone(),
    };
    let cli = Cli::try_parse_from(std::iter::once("remforge".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| anyhow!("manifest argv no longer parses: {e}"))?;
    let out_dir = match &outer.global.out {
        Some(o) => o.clone(),
        None => old.output_dir.clone(),
    };
    run(&cli, &argv)?;
    let new = RunManifest::read(&out_dir.join(crate::manifest::MANIFEST_FILE))?;
    let mismatches: Vec<String> = old
        .artifacts
        .iter()
        .filter(|a| !new.artifacts.contains(a))
        .map(|a| a.path.clone())
        .chain(new.artifacts.iter().filter(|a| !old.artifacts.iter().any(|o| o.path == a.path)).map(|a| a.path.clone()))
        .collect();
    let identical = mismatches.is_empty();
    let json = json!({ "command": "replay", "manifest": manifest_path, "identical": identical, "artifacts": new.artifacts.len(), "mismatches": mismatches });
    if !identical {
        bail!(remforge::Error::InvalidArgument(format!("replay differs from manifest in {mismatches:?}")));
    }
    let summary = Summary { csv: format!("identical,artifacts\n{identical},{}\n", new.artifacts.len()), json };
    Ok(summary.render(outer.global.format))
}
