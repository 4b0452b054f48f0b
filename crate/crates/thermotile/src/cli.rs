//! Batch commands behind the `thermotile` binary: scene synthesis,
//! feature recomputation, dataset construction, single-size training,
//! the full sweep, gradient checking, and report summarizing.
//!
//! Every command is a pure function of (config, seed): rerunning with
//! the same inputs reproduces every data artifact bit for bit. Logs go
//! to stderr as line-delimited JSON; data goes to files only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{assign_flights, extract_tiles, records_to_batch, split_train_val, write_dataset};
use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::nn::{
    grad_check, grad_check_f32, history_csv, load_checkpoint_file, save_checkpoint_file,
    train_model, CheckpointMeta, GradCheckReport, ModelConfig, TrainOptions,
    DEFAULT_TOLERANCE_F64, TOLERANCE_F32,
};
use crate::sweep::{run_sweep, SweepConfig, SweepReport};
use crate::synth::{
    gen_flight, load_scene, mix_seed, save_scene, OracleConfig, SceneBundle, WorldConfig,
};
use crate::terrain::{feature_height, slope_aspect};

/// Top-level JSON run configuration embedding every stage's config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Number of synthetic field days (one world per day).
    #[serde(default = "default_days")]
    pub days: usize,
    /// Day indices (0-based) whose flights are held out for testing.
    #[serde(default = "default_test_days")]
    pub test_days: Vec<usize>,
    /// Solar times flown on every day.
    #[serde(default = "default_flight_times")]
    pub flight_times: Vec<f64>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_days() -> usize {
    8
}
fn default_test_days() -> Vec<usize> {
    vec![5, 6, 7]
}
fn default_flight_times() -> Vec<f64> {
    vec![6.5, 10.0, 14.0, 17.5]
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.as_ref().display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.oracle.validate()?;
        self.sweep.validate()?;
        self.model.validate()?;
        if self.days == 0 {
            return Err(Error::config("need at least one day"));
        }
        if self.flight_times.is_empty() {
            return Err(Error::config("need at least one flight time"));
        }
        if self.test_days.iter().any(|&d| d >= self.days) {
            return Err(Error::config("test day index out of range"));
        }
        if self.test_days.is_empty() {
            return Err(Error::config("need at least one test day"));
        }
        if self.test_days.len() >= self.days {
            return Err(Error::config("holding out every day leaves nothing to train on"));
        }
        // Flight times must fall inside the daypart bands.
        for &t in &self.flight_times {
            crate::dataset::daypart_of(t)?;
        }
        Ok(())
    }

    /// World for one synthetic day: same knobs, day-specific seed.
    pub fn world_for_day(&self, day: usize) -> WorldConfig {
        WorldConfig {
            seed: mix_seed(self.seed, 0xDA1 + day as u64),
            ..self.world.clone()
        }
    }
}

/// Structured stderr log line.
pub fn log_event(stage: &str, msg: &str) {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    eprintln!(
        "{}",
        serde_json::json!({ "ts": ts, "stage": stage, "msg": msg })
    );
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlightEntry {
    pub flight_id: String,
    pub day: usize,
    pub solar_time: f64,
    pub role: String,
    pub path: String,
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlightsIndex {
    pub flights: Vec<FlightEntry>,
}

impl FlightsIndex {
    pub fn test_ids(&self) -> Vec<String> {
        self.flights
            .iter()
            .filter(|f| f.role == "test")
            .map(|f| f.flight_id.clone())
            .collect()
    }
}

fn hash_dir_files(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut hasher = Sha256::new();
    for p in names {
        hasher.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        hasher.update(std::fs::read(&p)?);
    }
    Ok(Sha256::digest(hasher.finalize()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Generate every configured flight into `out/scenes/` and write the
/// `flights.json` index mapping days to train/test roles.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<FlightsIndex> {
    cfg.validate()?;
    let scenes_dir = out.join("scenes");
    std::fs::create_dir_all(&scenes_dir)?;
    // Flights are independent; generate them in parallel but index them
    // in deterministic (day, time) order.
    let jobs: Vec<(usize, f64)> = (0..cfg.days)
        .flat_map(|d| cfg.flight_times.iter().map(move |&t| (d, t)))
        .collect();
    let results: Vec<Result<FlightEntry>> = {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(day, time)| {
                let world = cfg.world_for_day(day);
                let scene = gen_flight(&world, &cfg.oracle, time)?;
                let dir = scenes_dir.join(&scene.flight_id);
                save_scene(&scene, &dir, world.seed)?;
                let role = if cfg.test_days.contains(&day) { "test" } else { "train" };
                Ok(FlightEntry {
                    flight_id: scene.flight_id.clone(),
                    day,
                    solar_time: time,
                    role: role.to_string(),
                    path: dir.to_string_lossy().into_owned(),
                    content_hash: hash_dir_files(&dir)?,
                })
            })
            .collect()
    };
    let mut flights = Vec::with_capacity(results.len());
    for r in results {
        flights.push(r?);
    }
    let index = FlightsIndex { flights };
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::format(format!("index encode: {e}")))?;
    std::fs::write(out.join("flights.json"), json)?;
    log_event("synth", &format!("wrote {} scenes", index.flights.len()));
    Ok(index)
}

/// Recompute the derived feature grids of one scene directory from its
/// elevation models and orthophoto, overwriting the stored layers.
/// On untouched synthetic scenes this is a bit-exact no-op.
pub fn cmd_features(scene_dir: &Path) -> Result<()> {
    let scene = load_scene(scene_dir)?;
    let terrain = slope_aspect(&scene.dsm)?;
    let height = feature_height(&scene.dsm, &scene.dtm)?;
    let tgi = crate::features::tgi(&scene.rgb[0], &scene.rgb[1], &scene.rgb[2])?;
    // Slope/aspect lose their border ring inside the trimmed scene;
    // radiation, shade, and skyview are kept as stored (they were
    // computed on the padded scene before trimming).
    let _ = terrain;
    crate::grid::write_grid_file(&height.with_name("height"), scene_dir.join("height.mcg1"))?;
    crate::grid::write_grid_file(&tgi.with_name("tgi"), scene_dir.join("tgi.mcg1"))?;
    log_event("features", &format!("recomputed layers in {}", scene_dir.display()));
    Ok(())
}

/// Load the scenes listed by a flights index.
pub fn load_flights(index_path: &Path) -> Result<(FlightsIndex, Vec<SceneBundle>)> {
    let index: FlightsIndex = serde_json::from_str(&std::fs::read_to_string(index_path)?)
        .map_err(|e| Error::format(format!("flights index decode: {e}")))?;
    let mut scenes = Vec::with_capacity(index.flights.len());
    for f in &index.flights {
        scenes.push(load_scene(Path::new(&f.path))?);
    }
    Ok((index, scenes))
}

/// Build tile datasets for every configured size from saved scenes.
pub fn cmd_dataset(cfg: &RunConfig, scenes_index: &Path, out: &Path) -> Result<()> {
    let (index, scenes) = load_flights(scenes_index)?;
    let (train_scenes, _) = assign_flights(scenes, &index.test_ids())?;
    let fit_inputs: Vec<_> = train_scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let standardizer = Standardizer::fit(&fit_inputs)?;
    std::fs::create_dir_all(out)?;
    standardizer.save(out.join("standardizer.json"))?;
    for &k in &cfg.sweep.tile_sizes {
        let mut records = Vec::new();
        for scene in &train_scenes {
            records.extend(extract_tiles(scene, &standardizer, k, cfg.sweep.stride)?);
        }
        let (train, val) = split_train_val(
            records,
            cfg.sweep.train_fraction,
            mix_seed(cfg.sweep.seeds[0], k as u64),
        )?;
        let manifest = write_dataset(
            out.join(format!("datasets/k{k:02}")),
            k,
            cfg.sweep.stride,
            &standardizer.fingerprint(),
            &train,
            &val,
        )?;
        log_event(
            "dataset",
            &format!("k={k}: {} train / {} val tiles", manifest.train.count, manifest.val.count),
        );
    }
    Ok(())
}

/// Train one model for one tile size from a dataset directory.
pub fn cmd_train(cfg: &RunConfig, dataset_dir: &Path, out: &Path) -> Result<()> {
    let (manifest, train, val) = crate::dataset::load_dataset(dataset_dir)?;
    let k = manifest.tile_size;
    let opts = TrainOptions {
        epochs: cfg.sweep.epochs,
        batch_size: cfg.sweep.batch_size,
        lr: cfg.sweep.lr,
        seed: mix_seed(cfg.sweep.seeds[0], k as u64),
        checkpoint_dir: None,
    };
    let result = train_model::<f32>(
        &cfg.model,
        &records_to_batch(&train, k),
        &records_to_batch(&val, k),
        &opts,
    )?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("history.csv"), history_csv(&result.history))?;
    let meta = CheckpointMeta {
        config: cfg.model.clone(),
        tile_size: k,
        epoch: result.best_epoch,
        val_mse: result.best_val_mse,
        seed: opts.seed,
        tensors: Vec::new(),
    };
    save_checkpoint_file(out.join("checkpoint.ckpt"), &meta, &result.model.params, result.model.norm.as_ref())?;
    log_event(
        "train",
        &format!("k={k}: best val MSE {:.6} at epoch {}", result.best_val_mse, result.best_epoch),
    );
    Ok(())
}

/// End-to-end sweep over saved scenes; writes the report tree.
pub fn cmd_sweep(cfg: &RunConfig, scenes_index: &Path, out: &Path) -> Result<SweepReport> {
    let (index, scenes) = load_flights(scenes_index)?;
    let (train_scenes, test_scenes) = assign_flights(scenes, &index.test_ids())?;
    log_event(
        "sweep",
        &format!("{} train / {} test flights", train_scenes.len(), test_scenes.len()),
    );
    let report = run_sweep(&cfg.sweep, &cfg.model, &train_scenes, &test_scenes, Some(out))?;
    for s in &report.sizes {
        log_event("sweep", &format!("k={} test MSE {:.6} (n={})", s.tile_size, s.mse, s.n));
    }
    if let Some(sat) = &report.saturation {
        log_event("sweep", &format!("saturation at {} px ({:.2} m)", sat.pixels, sat.meters));
    }
    Ok(report)
}

/// Gradient verification; returns the report for exit-code mapping.
pub fn cmd_gradcheck(f32_mode: bool, seed: u64) -> GradCheckReport {
    let cfg = ModelConfig::default();
    let report = if f32_mode {
        grad_check_f32(&cfg, seed, TOLERANCE_F32)
    } else {
        grad_check(&cfg, seed, DEFAULT_TOLERANCE_F64)
    };
    print!("{}", report.table());
    report
}

/// Human summary of a stored report.json.
pub fn cmd_report(report_path: &Path) -> Result<String> {
    let report: SweepReport = serde_json::from_str(&std::fs::read_to_string(report_path)?)
        .map_err(|e| Error::format(format!("report decode: {e}")))?;
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>12} {:>10} {:>10} {:>12}\n",
        "tile_size", "test_mse", "n", "epoch", "params"
    ));
    for s in &report.sizes {
        out.push_str(&format!(
            "{:<10} {:>12.6} {:>10} {:>10} {:>12}\n",
            s.tile_size, s.mse, s.n, s.best_epoch, s.param_count
        ));
    }
    match &report.saturation {
        Some(sat) => out.push_str(&format!(
            "saturation: {} px = {:.2} m (epsilon {})\n",
            sat.pixels, sat.meters, report.config.epsilon
        )),
        None => out.push_str("saturation: not estimated\n"),
    }
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    Ok(out)
}

/// Checkpoint summary used by the binary's `report --checkpoint` path.
pub fn describe_checkpoint(path: &Path) -> Result<String> {
    let (meta, tensors) = load_checkpoint_file(path)?;
    let n: usize = tensors.iter().map(|(_, d)| d.len()).sum();
    Ok(format!(
        "tile {} epoch {} val_mse {:.6} seed {} tensors {} values {}",
        meta.tile_size,
        meta.epoch,
        meta.val_mse,
        meta.seed,
        tensors.len(),
        n
    ))
}
