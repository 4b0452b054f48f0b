//! The core experiment: train one model per tile size, evaluate densely
//! on held-out scenes, stratify errors by microhabitat and daypart, and
//! detect the tile size where test error saturates.
//!
//! Evaluation centers live on a global lattice (multiples of the eval
//! stride), so squared errors at a pixel are comparable across tile
//! sizes; a window is evaluated only where it is fully interior and the
//! center pixel is bare ground.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    daypart_of, extract_tiles, records_to_batch, split_train_val, write_dataset, Daypart,
    Microhabitat,
};
use crate::error::{Error, Result};
use crate::features::{Standardizer, TGI_THRESHOLD};
use crate::grid::{write_grid_file, Grid};
use crate::nn::{
    history_csv, param_count, save_checkpoint_file, train_model, CheckpointMeta,
    Model, ModelConfig, Tensor4, TileBatch, TrainOptions, Workspace,
};
use crate::synth::{mix_seed, SceneBundle};
use crate::terrain::{slope_aspect, slope_sd_radius};

pub const DEFAULT_TILE_SIZES: [usize; 7] = [9, 15, 21, 31, 47, 63, 81];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_tile_sizes")]
    pub tile_sizes: Vec<usize>,
    /// Stride between training tile centers.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// One model per seed per size; the first seed is the primary run.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Lattice stride for dense test evaluation; 1 means every pixel.
    #[serde(default = "default_eval_stride")]
    pub eval_grid_stride: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Saturation tolerance: smallest size within (1 + epsilon) of the
    /// best MSE.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_eval_points")]
    pub eval_points_per_scene: usize,
}

fn default_tile_sizes() -> Vec<usize> {
    DEFAULT_TILE_SIZES.to_vec()
}
fn default_stride() -> usize {
    11
}
fn default_epochs() -> usize {
    100
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_eval_stride() -> usize {
    4
}
fn default_lr() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    64
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_eval_points() -> usize {
    20
}

impl Default for SweepConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_sizes.is_empty() {
            return Err(Error::config("tile_sizes must be nonempty"));
        }
        for w in self.tile_sizes.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::config("tile_sizes must be strictly ascending"));
            }
        }
        if self.tile_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::config("tile sizes must be odd"));
        }
        if self.stride == 0 || self.eval_grid_stride == 0 {
            return Err(Error::config("strides must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be nonempty"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::config("train_fraction outside [0, 1]"));
        }
        if self.epsilon < 0.0 {
            return Err(Error::config("epsilon must be nonnegative"));
        }
        Ok(())
    }
}

/// Mean squared error of a list of signed errors (degrees C).
pub fn mse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::config("mse of an empty list"));
    }
    let mut acc = 0.0f64;
    for e in errors {
        acc += e * e;
    }
    Ok(acc / errors.len() as f64)
}

/// Squared-error grid for one trained model over one scene: evaluated at
/// bare-ground centers on the global eval lattice, NaN elsewhere.
pub fn evaluate_scene(
    model: &Model<f32>,
    scene: &SceneBundle,
    std: &Standardizer,
    eval_stride: usize,
) -> Result<Grid> {
    let k = model.tile_size();
    let (w, h) = (scene.stack.width(), scene.stack.height());
    if k > w || k > h {
        return Err(Error::config(format!("tile size {k} exceeds the {w}x{h} scene")));
    }
    let zstack = std.standardize_stack(&scene.stack);
    let met64 = std.standardize_met(&scene.met);
    let met_row: Vec<f32> = met64.iter().map(|&v| v as f32).collect();
    let half = k / 2;
    let first = half.div_ceil(eval_stride) * eval_stride;

    let mut centers = Vec::new();
    let mut cr = first;
    while cr + half < h {
        let mut cc = first;
        while cc + half < w {
            if scene.stack.tgi().get(cr, cc) as f64 <= TGI_THRESHOLD
                && scene.thermal.get(cr, cc).is_finite()
            {
                centers.push((cr, cc));
            }
            cc += eval_stride;
        }
        cr += eval_stride;
    }

    let mut se = Grid::filled(w, h, f32::NAN).with_resolution(scene.stack.resolution_m());
    se.name = format!("se_{}_k{k}", scene.flight_id);
    let mut ws = Workspace::new();
    let mut buf = Vec::new();
    for chunk in centers.chunks(256) {
        let mut tiles = Tensor4::<f32>::zeros([chunk.len(), 5, k, k]);
        let mut met = Vec::with_capacity(chunk.len() * 8);
        let rec = 5 * k * k;
        for (i, &(cr, cc)) in chunk.iter().enumerate() {
            crate::dataset::window_inputs(&zstack, k, cr - half, cc - half, &mut buf);
            tiles.data[i * rec..(i + 1) * rec].copy_from_slice(&buf);
            met.extend_from_slice(&met_row);
        }
        let pred = model.forward(&tiles, &met, &mut ws)?;
        for (&(cr, cc), p) in chunk.iter().zip(pred) {
            let pred_c = std.uncenter_label(p as f64);
            let truth = scene.thermal.get(cr, cc) as f64;
            let e = pred_c - truth;
            se.set(cr, cc, (e * e) as f32);
        }
    }
    Ok(se)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StratumMse {
    pub microhabitat: Microhabitat,
    pub daypart: Daypart,
    pub mse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrataTable {
    pub rows: Vec<StratumMse>,
    pub overall_mse: f64,
    pub overall_n: usize,
}

/// Aggregate squared-error grids by (microhabitat, daypart). The
/// microhabitat comes from the raw shade channel at each evaluated
/// pixel, the daypart from the scene's solar time. Empty strata are
/// absent from the table, not zero.
pub fn stratified_mse(entries: &[(&Grid, &SceneBundle)]) -> Result<StrataTable> {
    let mut acc: BTreeMap<(Microhabitat, Daypart), (f64, usize)> = BTreeMap::new();
    let mut overall = (0.0f64, 0usize);
    for (se, scene) in entries {
        let daypart = daypart_of(scene.solar_time)?;
        for r in 0..se.height {
            for c in 0..se.width {
                let v = se.get(r, c);
                if !v.is_finite() {
                    continue;
                }
                let micro = if scene.stack.shade().get(r, c) >= 0.5 {
                    Microhabitat::Shade
                } else {
                    Microhabitat::Open
                };
                let slot = acc.entry((micro, daypart)).or_insert((0.0, 0));
                slot.0 += v as f64;
                slot.1 += 1;
                overall.0 += v as f64;
                overall.1 += 1;
            }
        }
    }
    if overall.1 == 0 {
        return Err(Error::compute("no evaluated pixels to stratify"));
    }
    Ok(StrataTable {
        rows: acc
            .into_iter()
            .map(|((m, d), (sum, n))| StratumMse { microhabitat: m, daypart: d, mse: sum / n as f64, n })
            .collect(),
        overall_mse: overall.0 / overall.1 as f64,
        overall_n: overall.1,
    })
}

/// Smallest tile size whose MSE is within `(1 + epsilon)` of the best
/// over all sizes. Returns (pixels, meters).
pub fn saturation_scale(
    sizes: &[usize],
    mse_by_size: &[f64],
    epsilon: f64,
    resolution_m: f64,
) -> Result<(usize, f64)> {
    if sizes.len() < 3 {
        return Err(Error::config("saturation needs at least 3 tile sizes"));
    }
    if sizes.len() != mse_by_size.len() {
        return Err(Error::dimension("sizes and MSE lists differ in length"));
    }
    if mse_by_size.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::config("MSE values must be positive"));
    }
    let best = mse_by_size.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = (1.0 + epsilon) * best;
    for (&k, &m) in sizes.iter().zip(mse_by_size) {
        if m <= threshold {
            return Ok((k, k as f64 * resolution_m));
        }
    }
    unreachable!("the minimum itself is always within threshold");
}

/// Approximately uniform lattice of `n` evaluation points over valid
/// (bare-ground, interior) pixels, snapped to the eval-stride grid.
pub fn sample_eval_points(
    scene: &SceneBundle,
    n: usize,
    margin_px: usize,
    eval_stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(Error::config("need at least one eval point"));
    }
    let (w, h) = (scene.stack.width(), scene.stack.height());
    if 2 * margin_px >= w.min(h) {
        return Err(Error::config("margin leaves no interior"));
    }
    let rows = (n as f64).sqrt().floor().max(1.0) as usize;
    let cols = n.div_ceil(rows);
    let usable_h = h - 2 * margin_px;
    let usable_w = w - 2 * margin_px;
    let max_snap = (usable_h / rows).min(usable_w / cols) / 2;

    let valid = |r: usize, c: usize| -> bool {
        r >= margin_px
            && c >= margin_px
            && r < h - margin_px
            && c < w - margin_px
            && r % eval_stride == 0
            && c % eval_stride == 0
            && (scene.stack.tgi().get(r, c) as f64) <= TGI_THRESHOLD
            && scene.thermal.get(r, c).is_finite()
    };

    let mut points = Vec::with_capacity(n);
    'outer: for i in 0..rows {
        for j in 0..cols {
            if points.len() == n {
                break 'outer;
            }
            let r0 = margin_px + (usable_h * (2 * i + 1)) / (2 * rows);
            let c0 = margin_px + (usable_w * (2 * j + 1)) / (2 * cols);
            // Expanding ring search for the nearest valid lattice pixel.
            let mut found = None;
            'search: for radius in 0..=max_snap {
                let lo_r = r0.saturating_sub(radius);
                let hi_r = (r0 + radius).min(h - 1);
                let lo_c = c0.saturating_sub(radius);
                let hi_c = (c0 + radius).min(w - 1);
                for r in lo_r..=hi_r {
                    for c in lo_c..=hi_c {
                        if (r.abs_diff(r0)).max(c.abs_diff(c0)) != radius {
                            continue;
                        }
                        if valid(r, c) {
                            found = Some((r, c));
                            break 'search;
                        }
                    }
                }
            }
            match found {
                Some(p) => points.push(p),
                None => {
                    return Err(Error::compute(format!(
                        "no valid pixel near lattice cell ({i},{j}); scene too vegetated"
                    )))
                }
            }
        }
    }
    Ok(points)
}

/// Spatial features extracted at the sampled points of one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointFeatures {
    pub flight_id: String,
    pub point: (usize, usize),
    pub radiation: f64,
    pub skyview: f64,
    pub tgi: f64,
    pub slope_sd_2m: f64,
}

/// Features the curves condition on, per sampled point.
pub fn point_features(scene: &SceneBundle, points: &[(usize, usize)]) -> Result<Vec<PointFeatures>> {
    let terrain = slope_aspect(&scene.dsm)?;
    let slope_sd = slope_sd_radius(&terrain.slope, 2.0)?;
    Ok(points
        .iter()
        .map(|&(r, c)| PointFeatures {
            flight_id: scene.flight_id.clone(),
            point: (r, c),
            radiation: scene.stack.radiation().get(r, c) as f64,
            skyview: scene.stack.skyview().get(r, c) as f64,
            tgi: scene.stack.tgi().get(r, c) as f64,
            slope_sd_2m: slope_sd.get(r, c) as f64,
        })
        .collect())
}

pub const CURVE_FEATURES: [&str; 4] = ["radiation", "skyview", "tgi", "slope_sd_2m"];
const TERCILE_NAMES: [&str; 3] = ["low", "mid", "high"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub feature: String,
    pub tercile: String,
    pub tile_size: usize,
    pub mse: f64,
    pub n: usize,
}

/// Tercile error curves: split the sampled points into low/mid/high by
/// each feature and report mean squared error against tile size.
pub fn feature_error_curves(
    features: &[PointFeatures],
    se_at_points: &BTreeMap<usize, Vec<f64>>,
    warnings: &mut Vec<String>,
) -> Result<Vec<CurvePoint>> {
    let n = features.len();
    if n < 9 {
        return Err(Error::config("need at least 9 points for terciles"));
    }
    for se in se_at_points.values() {
        if se.len() != n {
            return Err(Error::dimension("SE values do not align with points"));
        }
    }
    let mut rows = Vec::new();
    for feature in CURVE_FEATURES {
        let value = |p: &PointFeatures| match feature {
            "radiation" => p.radiation,
            "skyview" => p.skyview,
            "tgi" => p.tgi,
            "slope_sd_2m" => p.slope_sd_2m,
            _ => unreachable!(),
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            value(&features[a])
                .partial_cmp(&value(&features[b]))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let span = value(&features[order[n - 1]]) - value(&features[order[0]]);
        if span == 0.0 {
            warnings.push(format!("feature {feature}: all points share one value; terciles degenerate"));
        }
        for t in 0..3 {
            let lo = t * n / 3;
            let hi = (t + 1) * n / 3;
            let members = &order[lo..hi];
            for (&k, se) in se_at_points {
                let vals: Vec<f64> = members.iter().map(|&i| se[i]).collect();
                rows.push(CurvePoint {
                    feature: feature.to_string(),
                    tercile: TERCILE_NAMES[t].to_string(),
                    tile_size: k,
                    mse: mse(&vals)?,
                    n: vals.len(),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeResult {
    pub tile_size: usize,
    pub param_count: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// Test MSE of the primary (first-seed) model.
    pub mse: f64,
    pub n: usize,
    /// Test MSE per seed, when several seeds run.
    pub seed_mse: Vec<f64>,
    pub strata: Vec<StratumMse>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaturationResult {
    pub pixels: usize,
    pub meters: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub resolution_m: f64,
    pub config: SweepConfig,
    pub sizes: Vec<SizeResult>,
    pub saturation: Option<SaturationResult>,
    pub feature_curves: Vec<CurvePoint>,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn mse_by_size(&self) -> Vec<(usize, f64)> {
        self.sizes.iter().map(|s| (s.tile_size, s.mse)).collect()
    }

    pub fn mse_by_size_csv(&self) -> String {
        let mut out = String::from("tile_size,mse,n\n");
        for s in &self.sizes {
            out.push_str(&format!("{},{:.9},{}\n", s.tile_size, s.mse, s.n));
        }
        out
    }

    pub fn strata_csv(&self) -> String {
        let mut out = String::from("tile_size,microhabitat,daypart,mse,n\n");
        for s in &self.sizes {
            for row in &s.strata {
                out.push_str(&format!(
                    "{},{},{},{:.9},{}\n",
                    s.tile_size,
                    row.microhabitat.name(),
                    row.daypart.name(),
                    row.mse,
                    row.n
                ));
            }
        }
        out
    }

    pub fn feature_curves_csv(&self) -> String {
        let mut out = String::from("feature,tercile,tile_size,mse,n\n");
        for c in &self.feature_curves {
            out.push_str(&format!(
                "{},{},{},{:.9},{}\n",
                c.feature, c.tercile, c.tile_size, c.mse, c.n
            ));
        }
        out
    }
}

/// Train, evaluate, and aggregate across every configured tile size.
/// When `out_dir` is given, datasets, checkpoints, SE grids, and the
/// report files are persisted under it; a size that fails still leaves
/// the completed sizes on disk.
pub fn run_sweep(
    cfg: &SweepConfig,
    model_cfg: &ModelConfig,
    train_scenes: &[SceneBundle],
    test_scenes: &[SceneBundle],
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_scenes.is_empty() || test_scenes.is_empty() {
        return Err(Error::config("need nonempty train and test scene sets"));
    }
    for tr in train_scenes {
        if test_scenes.iter().any(|te| te.flight_id == tr.flight_id) {
            return Err(Error::config(format!("flight {} appears on both sides", tr.flight_id)));
        }
    }
    let resolution_m = train_scenes[0].stack.resolution_m();
    let mut warnings = Vec::new();

    let fit_inputs: Vec<_> = train_scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let standardizer = Standardizer::fit(&fit_inputs)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        standardizer.save(dir.join("standardizer.json"))?;
    }

    // Shared evaluation points across sizes, interior for the largest.
    let max_k = *cfg.tile_sizes.last().unwrap();
    let margin = max_k / 2 + 1;
    let mut points_per_scene = Vec::new();
    let mut features_all = Vec::new();
    for scene in test_scenes {
        let points = sample_eval_points(scene, cfg.eval_points_per_scene, margin, cfg.eval_grid_stride)?;
        features_all.extend(point_features(scene, &points)?);
        points_per_scene.push(points);
    }

    let mut sizes: Vec<SizeResult> = Vec::new();
    let mut se_at_points: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &k in &cfg.tile_sizes {
        let attempt = run_one_size(
            k,
            cfg,
            model_cfg,
            &standardizer,
            train_scenes,
            test_scenes,
            &points_per_scene,
            &mut se_at_points,
            out_dir,
        );
        match attempt {
            Ok(size_result) => sizes.push(size_result),
            Err(e) => {
                // Persist what completed before aborting.
                warnings.push(format!("size {k} failed: {e}"));
                let partial = assemble_report(resolution_m, cfg, sizes, &se_at_points, &features_all, warnings)?;
                if let Some(dir) = out_dir {
                    write_report(&partial, dir)?;
                }
                return Err(Error::compute(format!("sweep aborted at size {k}: {e}")));
            }
        }
    }

    let report = assemble_report(resolution_m, cfg, sizes, &se_at_points, &features_all, warnings)?;
    if let Some(dir) = out_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

/// Dataset, training (one model per seed), dense evaluation, and
/// stratified aggregation for a single tile size.
#[allow(clippy::too_many_arguments)]
fn run_one_size(
    k: usize,
    cfg: &SweepConfig,
    model_cfg: &ModelConfig,
    standardizer: &Standardizer,
    train_scenes: &[SceneBundle],
    test_scenes: &[SceneBundle],
    points_per_scene: &[Vec<(usize, usize)>],
    se_at_points: &mut BTreeMap<usize, Vec<f64>>,
    out_dir: Option<&Path>,
) -> Result<SizeResult> {
    let mut records = Vec::new();
    for scene in train_scenes {
        records.extend(extract_tiles(scene, standardizer, k, cfg.stride)?);
    }
    if records.is_empty() {
        return Err(Error::compute(format!("size {k}: no usable tiles")));
    }
    let (train_recs, val_recs) =
        split_train_val(records, cfg.train_fraction, mix_seed(cfg.seeds[0], k as u64))?;
    if val_recs.is_empty() {
        return Err(Error::compute(format!("size {k}: empty validation split")));
    }
    if let Some(dir) = out_dir {
        write_dataset(
            dir.join(format!("datasets/k{k:02}")),
            k,
            cfg.stride,
            &standardizer.fingerprint(),
            &train_recs,
            &val_recs,
        )?;
    }
    let train_batch: TileBatch = records_to_batch(&train_recs, k);
    let val_batch: TileBatch = records_to_batch(&val_recs, k);

    let mut size_result: Option<SizeResult> = None;
    let mut seed_mse = Vec::new();
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let opts = TrainOptions {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            seed: mix_seed(seed, k as u64),
            checkpoint_dir: None,
        };
        let result = train_model::<f32>(model_cfg, &train_batch, &val_batch, &opts)?;

        let mut se_grids = Vec::new();
        for scene in test_scenes {
            se_grids.push(evaluate_scene(&result.model, scene, standardizer, cfg.eval_grid_stride)?);
        }
        let entries: Vec<(&Grid, &SceneBundle)> =
            se_grids.iter().zip(test_scenes).map(|(g, s)| (g, s)).collect();
        let table = stratified_mse(&entries)?;
        seed_mse.push(table.overall_mse);

        if si == 0 {
            if let Some(dir) = out_dir {
                let model_dir = dir.join(format!("models/k{k:02}"));
                std::fs::create_dir_all(&model_dir)?;
                std::fs::write(model_dir.join("history.csv"), history_csv(&result.history))?;
                let meta = CheckpointMeta {
                    config: model_cfg.clone(),
                    tile_size: k,
                    epoch: result.best_epoch,
                    val_mse: result.best_val_mse,
                    seed: opts.seed,
                    tensors: Vec::new(),
                };
                save_checkpoint_file(
                    model_dir.join("checkpoint.ckpt"),
                    &meta,
                    &result.model.params,
                    result.model.norm.as_ref(),
                )?;
                let se_dir = dir.join("se_grids");
                std::fs::create_dir_all(&se_dir)?;
                for (grid, scene) in se_grids.iter().zip(test_scenes) {
                    write_grid_file(grid, se_dir.join(format!("{}_k{k:02}.mcg1", scene.flight_id)))?;
                }
            }
            // SE at the sampled points, aligned with the feature rows.
            let mut se_vals = Vec::new();
            for (grid, points) in se_grids.iter().zip(points_per_scene) {
                for &(r, c) in points {
                    let v = grid.get(r, c);
                    if !v.is_finite() {
                        return Err(Error::compute(format!(
                            "size {k}: sampled point ({r},{c}) not evaluated"
                        )));
                    }
                    se_vals.push(v as f64);
                }
            }
            se_at_points.insert(k, se_vals);
            size_result = Some(SizeResult {
                tile_size: k,
                param_count: param_count(model_cfg, k)?,
                best_epoch: result.best_epoch,
                best_val_mse: result.best_val_mse,
                mse: table.overall_mse,
                n: table.overall_n,
                seed_mse: Vec::new(),
                strata: table.rows,
            });
        }
    }
    let mut size_result = size_result.expect("first seed always runs");
    size_result.seed_mse = seed_mse;
    Ok(size_result)
}

fn assemble_report(
    resolution_m: f64,
    cfg: &SweepConfig,
    sizes: Vec<SizeResult>,
    se_at_points: &BTreeMap<usize, Vec<f64>>,
    features: &[PointFeatures],
    mut warnings: Vec<String>,
) -> Result<SweepReport> {
    let saturation = if sizes.len() >= 3 {
        let ks: Vec<usize> = sizes.iter().map(|s| s.tile_size).collect();
        let ms: Vec<f64> = sizes.iter().map(|s| s.mse).collect();
        let (px, m) = saturation_scale(&ks, &ms, cfg.epsilon, resolution_m)?;
        if px == *ks.last().unwrap() && ms.last().unwrap() < &((1.0 + cfg.epsilon) * ms[ms.len() - 2]) {
            warnings.push("error still decreasing at the largest size; saturation may lie beyond the range".into());
        }
        Some(SaturationResult { pixels: px, meters: m })
    } else {
        warnings.push("fewer than 3 sizes: no saturation estimate".into());
        None
    };
    let feature_curves = if !sizes.is_empty() && !features.is_empty() {
        feature_error_curves(features, se_at_points, &mut warnings)?
    } else {
        Vec::new()
    };
    Ok(SweepReport {
        resolution_m,
        config: cfg.clone(),
        sizes,
        saturation,
        feature_curves,
        warnings,
    })
}

/// Write `report.json` and the three CSV views.
pub fn write_report(report: &SweepReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref().join("report");
    std::fs::create_dir_all(&dir)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::format(format!("report encode: {e}")))?;
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("mse_by_size.csv"), report.mse_by_size_csv())?;
    std::fs::write(dir.join("strata.csv"), report.strata_csv())?;
    std::fs::write(dir.join("feature_curves.csv"), report.feature_curves_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::assemble_stack;
    use crate::synth::MetVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, -1.0, 2.0, -2.0]).unwrap(), 2.5);
        assert!(mse(&[]).is_err());
    }

    #[test]
    fn mse_matches_independent_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let errors: Vec<f64> = (0..1000).map(|_| rng.random_range(-10.0..10.0)).collect();
        let got = mse(&errors).unwrap();
        // Kahan-compensated oracle.
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for e in &errors {
            let y = e * e - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        let oracle = sum / errors.len() as f64;
        assert!(((got - oracle) / oracle).abs() < 1e-9);
    }

    #[test]
    fn saturation_on_the_reference_curve() {
        let sizes = [9, 15, 21, 31, 47, 63, 81];
        let ms = [16.07, 8.0, 3.0, 1.58, 1.6, 1.55, 1.6];
        let (px, m) = saturation_scale(&sizes, &ms, 0.05, 0.15).unwrap();
        assert_eq!(px, 31);
        assert!((m - 4.65).abs() < 1e-9);
    }

    #[test]
    fn flat_curve_saturates_at_the_smallest_size() {
        let sizes = [9, 15, 21];
        let ms = [1.0, 1.0, 1.0];
        assert_eq!(saturation_scale(&sizes, &ms, 0.05, 0.15).unwrap().0, 9);
    }

    #[test]
    fn decreasing_curve_saturates_at_the_largest_size() {
        let sizes = [9, 15, 21];
        let ms = [4.0, 2.0, 1.0];
        assert_eq!(saturation_scale(&sizes, &ms, 0.05, 0.15).unwrap().0, 21);
    }

    #[test]
    fn saturation_is_monotone_in_epsilon() {
        let sizes = [9, 15, 21, 31, 47];
        let ms = [5.0, 2.0, 1.3, 1.05, 1.0];
        let mut last = usize::MAX;
        for eps in [0.0, 0.05, 0.1, 0.3, 0.5, 1.0, 4.0] {
            let (px, _) = saturation_scale(&sizes, &ms, eps, 0.15).unwrap();
            assert!(px <= last, "eps {eps} raised saturation {px} > {last}");
            last = px;
        }
    }

    #[test]
    fn saturation_input_validation() {
        assert!(saturation_scale(&[9, 15], &[1.0, 1.0], 0.05, 0.15).is_err());
        assert!(saturation_scale(&[9, 15, 21], &[1.0, 0.0, 1.0], 0.05, 0.15).is_err());
    }

    fn synthetic_scene(n: usize, seed: u64, solar_time: f64) -> SceneBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_grid = |lo: f32, hi: f32| {
            let mut g = Grid::zeros(n, n);
            for v in g.values_mut() {
                *v = rng.random_range(lo..hi);
            }
            g
        };
        let radiation = rand_grid(100.0, 900.0);
        let skyview = rand_grid(0.7, 1.0);
        let height = rand_grid(0.0, 1.0);
        let tgi = rand_grid(-0.05, 0.03);
        let mut shade = Grid::zeros(n, n);
        for v in shade.values_mut() {
            *v = if rng.random_bool(0.3) { 1.0 } else { 0.0 };
        }
        let mut thermal = Grid::zeros(n, n);
        for (t, &r) in thermal.values_mut().iter_mut().zip(radiation.values()) {
            *t = 25.0 + 0.01 * r;
        }
        let mut dsm = Grid::zeros(n, n);
        for v in dsm.values_mut() {
            *v = rng.random_range(0.0f32..0.3);
        }
        SceneBundle {
            flight_id: format!("f{seed:016x}-t{solar_time}"),
            solar_time,
            dtm: Grid::zeros(n, n),
            dsm,
            rgb: [Grid::zeros(n, n), Grid::zeros(n, n), Grid::zeros(n, n)],
            stack: assemble_stack(radiation, shade, skyview, tgi, height).unwrap(),
            thermal,
            met: MetVector::default(),
        }
    }

    #[test]
    fn constant_model_squared_errors_recompute() {
        let scene = synthetic_scene(48, 2, 12.0);
        let std = Standardizer::fit(&[(&scene.stack, &scene.met, &scene.thermal)]).unwrap();
        // Zeroed model predicts the centered value 0, i.e. label_mean C.
        let cfg = ModelConfig { stem_width: 4, stage_widths: vec![4], head_hidden: 8, ..ModelConfig::default() };
        let mut model = Model::<f32>::new(&cfg, 9, 1).unwrap();
        model.params.zero_fill();
        let se = evaluate_scene(&model, &scene, &std, 4).unwrap();
        let mut checked = 0;
        for r in 0..48 {
            for c in 0..48 {
                let v = se.get(r, c);
                if v.is_finite() {
                    let truth = scene.thermal.get(r, c) as f64;
                    let expect = (std.label_mean - truth) * (std.label_mean - truth);
                    assert!((v as f64 - expect).abs() < 1e-4, "({r},{c}): {v} vs {expect}");
                    assert_eq!(r % 4, 0);
                    assert_eq!(c % 4, 0);
                    checked += 1;
                }
            }
        }
        assert!(checked > 50, "eval grid too sparse: {checked}");
    }

    #[test]
    fn strata_partition_and_weighted_mean() {
        let scene_noon = synthetic_scene(48, 3, 12.0);
        let scene_morning = synthetic_scene(48, 4, 6.5);
        let std = Standardizer::fit(&[(&scene_noon.stack, &scene_noon.met, &scene_noon.thermal)]).unwrap();
        let cfg = ModelConfig { stem_width: 4, stage_widths: vec![4], head_hidden: 8, ..ModelConfig::default() };
        let mut model = Model::<f32>::new(&cfg, 9, 1).unwrap();
        model.params.zero_fill();
        let se1 = evaluate_scene(&model, &scene_noon, &std, 4).unwrap();
        let se2 = evaluate_scene(&model, &scene_morning, &std, 4).unwrap();
        let table = stratified_mse(&[(&se1, &scene_noon), (&se2, &scene_morning)]).unwrap();

        let total: usize = table.rows.iter().map(|r| r.n).sum();
        assert_eq!(total, table.overall_n, "strata must partition the evaluated pixels");
        let weighted: f64 =
            table.rows.iter().map(|r| r.mse * r.n as f64).sum::<f64>() / table.overall_n as f64;
        assert!(
            ((weighted - table.overall_mse) / table.overall_mse).abs() < 1e-9,
            "{} vs {}",
            weighted,
            table.overall_mse
        );
        // Both dayparts and both microhabitats appear.
        assert!(table.rows.iter().any(|r| r.daypart == Daypart::Morning));
        assert!(table.rows.iter().any(|r| r.daypart == Daypart::Midday));
        assert!(table.rows.iter().any(|r| r.microhabitat == Microhabitat::Shade));
    }

    #[test]
    fn single_open_noon_scene_populates_one_daypart() {
        let mut scene = synthetic_scene(48, 5, 12.0);
        let open = Grid::zeros(48, 48);
        // Rebuild the stack with an all-open shade channel... keep one
        // shaded pixel off-lattice so the standardizer stays happy.
        let mut shade = open.clone();
        shade.set(1, 1, 1.0);
        scene = SceneBundle {
            stack: assemble_stack(
                scene.stack.radiation().clone(),
                shade,
                scene.stack.skyview().clone(),
                scene.stack.tgi().clone(),
                scene.stack.object_height().clone(),
            )
            .unwrap(),
            ..scene
        };
        let std = Standardizer::fit(&[(&scene.stack, &scene.met, &scene.thermal)]).unwrap();
        let cfg = ModelConfig { stem_width: 4, stage_widths: vec![4], head_hidden: 8, ..ModelConfig::default() };
        let mut model = Model::<f32>::new(&cfg, 9, 1).unwrap();
        model.params.zero_fill();
        let se = evaluate_scene(&model, &scene, &std, 4).unwrap();
        let table = stratified_mse(&[(&se, &scene)]).unwrap();
        assert!(table
            .rows
            .iter()
            .all(|r| r.daypart == Daypart::Midday && r.microhabitat == Microhabitat::Open));
    }

    #[test]
    fn eval_points_form_a_spread_lattice() {
        let scene = synthetic_scene(200, 6, 12.0);
        let points = sample_eval_points(&scene, 20, 10, 4).unwrap();
        assert_eq!(points.len(), 20);
        for &(r, c) in &points {
            assert_eq!(r % 4, 0);
            assert_eq!(c % 4, 0);
            assert!(r >= 10 && r < 190 && c >= 10 && c < 190);
        }
        // Pairwise distances stay a reasonable fraction of the spacing.
        let mut min_d2 = usize::MAX;
        for i in 0..points.len() {
            for j in 0..i {
                let dr = points[i].0.abs_diff(points[j].0);
                let dc = points[i].1.abs_diff(points[j].1);
                min_d2 = min_d2.min(dr * dr + dc * dc);
            }
        }
        assert!(min_d2 >= 20 * 20, "points collapsed: min distance {}", (min_d2 as f64).sqrt());
    }

    #[test]
    fn single_point_lands_near_the_center() {
        let scene = synthetic_scene(100, 7, 12.0);
        let points = sample_eval_points(&scene, 1, 10, 1).unwrap();
        let (r, c) = points[0];
        assert!(r.abs_diff(50) <= 2 && c.abs_diff(50) <= 2);
    }

    #[test]
    fn fully_vegetated_scene_yields_an_error() {
        let mut scene = synthetic_scene(64, 8, 12.0);
        let mut tgi = scene.stack.tgi().clone();
        for v in tgi.values_mut() {
            *v = 0.2;
        }
        scene = SceneBundle {
            stack: assemble_stack(
                scene.stack.radiation().clone(),
                scene.stack.shade().clone(),
                scene.stack.skyview().clone(),
                tgi,
                scene.stack.object_height().clone(),
            )
            .unwrap(),
            ..scene
        };
        assert!(sample_eval_points(&scene, 20, 8, 4).is_err());
    }

    #[test]
    fn tercile_membership_counts_differ_by_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let features: Vec<PointFeatures> = (0..20)
            .map(|i| PointFeatures {
                flight_id: "f".into(),
                point: (i, i),
                radiation: rng.random_range(0.0..900.0),
                skyview: rng.random_range(0.5..1.0),
                tgi: rng.random_range(-0.05..0.04),
                slope_sd_2m: rng.random_range(0.0..0.3),
            })
            .collect();
        let mut se = BTreeMap::new();
        se.insert(9usize, (0..20).map(|i| i as f64 + 1.0).collect::<Vec<f64>>());
        se.insert(15usize, (0..20).map(|i| 0.5 * i as f64 + 1.0).collect::<Vec<f64>>());
        let mut warnings = Vec::new();
        let rows = feature_error_curves(&features, &se, &mut warnings).unwrap();
        assert!(warnings.is_empty());
        for feature in CURVE_FEATURES {
            let counts: Vec<usize> = TERCILE_NAMES
                .iter()
                .map(|t| {
                    rows.iter()
                        .find(|r| r.feature == feature && &r.tercile == t && r.tile_size == 9)
                        .unwrap()
                        .n
                })
                .collect();
            let max = *counts.iter().max().unwrap();
            let min = *counts.iter().min().unwrap();
            assert!(max - min <= 1, "{feature}: {counts:?}");
            assert_eq!(counts.iter().sum::<usize>(), 20);
        }
    }

    #[test]
    fn degenerate_feature_is_flagged() {
        let features: Vec<PointFeatures> = (0..9)
            .map(|i| PointFeatures {
                flight_id: "f".into(),
                point: (i, i),
                radiation: 500.0, // constant
                skyview: 0.9 + i as f64 * 0.01,
                tgi: 0.0 + i as f64 * 0.001,
                slope_sd_2m: i as f64 * 0.01,
            })
            .collect();
        let mut se = BTreeMap::new();
        se.insert(9usize, vec![1.0; 9]);
        let mut warnings = Vec::new();
        feature_error_curves(&features, &se, &mut warnings).unwrap();
        assert!(warnings.iter().any(|w| w.contains("radiation")));
        // Too few points for terciles errors out.
        assert!(feature_error_curves(&features[..8], &se, &mut Vec::new()).is_err());
    }
}
