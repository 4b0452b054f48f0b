//! Acceptance suite: the project's exit criteria, one test per
//! criterion, each printing a `[PASS]`/`[FAIL]` line. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.
//!
//! Criterion 4 trains five models end to end (plus a two-model negative
//! control) in deterministic single-threaded mode and is the slow one.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thermotile::dataset::count_tiles;
use thermotile::features::{assemble_stack, Standardizer};
use thermotile::grid::{read_grid, write_grid, Grid};
use thermotile::nn::{
    grad_check, load_checkpoint_file, save_checkpoint_file, CheckpointMeta, Model, ModelConfig,
    ParamSet, DEFAULT_TOLERANCE_F64,
};
use thermotile::solar::{cast_shadow, skyview, SunPosition};
use thermotile::sweep::{mse, run_sweep, stratified_mse, SweepConfig};
use thermotile::synth::{gen_flight, MetVector, OracleConfig, SceneBundle, WorldConfig};
use thermotile::terrain::{slope_aspect, slope_sd_radius};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("[{}] {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion}: {detail}");
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_fidelity() {
    let t0 = Instant::now();
    let rep = grad_check(&ModelConfig::default(), 20240612, DEFAULT_TOLERANCE_F64);
    let elapsed = t0.elapsed().as_secs_f64();
    let max_err = rep.entries.iter().map(|e| e.max_rel_err).fold(0.0f64, f64::max);
    let pass = rep.passed() && elapsed < 60.0;
    report(
        "criterion 1 (gradient fidelity)",
        pass,
        &format!(
            "all {} layer checks < 1e-4 (max rel err {:.2e}) in {:.1}s\n{}",
            rep.entries.len(),
            max_err,
            elapsed,
            rep.table()
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_geometry_oracles() {
    let mut failures = Vec::new();

    // Pillar shadow length within 1 px of h/tan(elev), 20..70 degrees.
    let size = 96;
    let mut dsm = Grid::zeros(size, size);
    dsm.set(size / 2, size / 2, 2.0);
    for elev_deg in [20.0f64, 30.0, 40.0, 50.0, 60.0, 70.0] {
        let sun = SunPosition { elevation: elev_deg.to_radians(), azimuth: std::f64::consts::PI };
        let shade = cast_shadow(&dsm, sun, 40.0).unwrap();
        let mut run = 0;
        for d in 1..size / 2 {
            if shade.get(size / 2 - d, size / 2) == 1.0 {
                run = d;
            } else {
                break;
            }
        }
        let expect = 2.0 / elev_deg.to_radians().tan() / 0.15;
        if (run as f64 - expect).abs() > 1.0 + 1e-9 {
            failures.push(format!("shadow at {elev_deg} deg: {run} vs {expect:.2}"));
        }
    }

    // Flat-plane skyview factor is exactly 1 in the interior.
    let flat = Grid::zeros(64, 64);
    let svf = skyview(&flat, 16, 3.0).unwrap();
    for r in 21..43 {
        for c in 21..43 {
            if (svf.get(r, c) as f64 - 1.0).abs() > 1e-6 {
                failures.push(format!("flat svf {} at ({r},{c})", svf.get(r, c)));
            }
        }
    }

    // Single 45-degree wall in 1 of 16 directions.
    let mut wall = Grid::zeros(41, 41);
    wall.set(20 - 6, 20, (6.0 * 0.15) as f32);
    let svf_wall = skyview(&wall, 16, 2.0).unwrap();
    let expect = 1.0 - std::f64::consts::FRAC_PI_4.sin() / 16.0;
    if (svf_wall.get(20, 20) as f64 - expect).abs() > 1e-6 {
        failures.push(format!("wall svf {} vs {expect}", svf_wall.get(20, 20)));
    }

    // Tilted-plane slope matches atan(gradient) to 1e-6 rad.
    let mut plane = Grid::zeros(32, 32);
    for r in 0..32 {
        for c in 0..32 {
            plane.set(r, c, (0.1 * c as f64 * 0.15) as f32);
        }
    }
    let t = slope_aspect(&plane).unwrap();
    let expect_slope = 0.1f64.atan();
    for r in 1..31 {
        for c in 1..31 {
            if (t.slope.get(r, c) as f64 - expect_slope).abs() > 1e-6 {
                failures.push(format!("slope {} vs {expect_slope}", t.slope.get(r, c)));
            }
        }
    }

    // slope_sd_radius equals a brute-force window loop on random fields.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..2 {
        let mut slope = Grid::zeros(32, 32);
        for v in slope.values_mut() {
            *v = rng.random_range(0.0f32..0.8);
        }
        let radius_m = 0.45;
        let sd = slope_sd_radius(&slope, radius_m).unwrap();
        let r2 = (radius_m / 0.15) * (radius_m / 0.15);
        for r in 0..32isize {
            for c in 0..32isize {
                let mut vals = Vec::new();
                for dy in -4isize..=4 {
                    for dx in -4isize..=4 {
                        if ((dy * dy + dx * dx) as f64) <= r2 {
                            let (rr, cc) = (r + dy, c + dx);
                            if rr >= 0 && rr < 32 && cc >= 0 && cc < 32 {
                                vals.push(slope.get(rr as usize, cc as usize) as f64);
                            }
                        }
                    }
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                if (sd.get(r as usize, c as usize) as f64 - var.sqrt()).abs() > 1e-6 {
                    failures.push(format!("slope_sd trial {trial} mismatch at ({r},{c})"));
                }
            }
        }
    }

    report(
        "criterion 2 (geometry oracles)",
        failures.is_empty(),
        &if failures.is_empty() {
            "shadow length, flat/wall skyview, plane slope, slope-sd brute force all within tolerance".into()
        } else {
            failures.join("; ")
        },
    );
}

// ---------------------------------------------------------------- 3

/// Cheap 1000x1000 scene with scattered vegetation, built directly.
fn big_flat_scene(seed: u64) -> SceneBundle {
    let n = 1000;
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
    let mut tgi = rand_grid(-0.05, 0.03);
    for v in tgi.values_mut() {
        if rng.random_bool(0.05) {
            *v = 0.2;
        }
    }
    let mut shade = Grid::zeros(n, n);
    for v in shade.values_mut() {
        *v = if rng.random_bool(0.25) { 1.0 } else { 0.0 };
    }
    let mut thermal = Grid::zeros(n, n);
    for (t, &r) in thermal.values_mut().iter_mut().zip(radiation.values()) {
        *t = 25.0 + 0.01 * r;
    }
    SceneBundle {
        flight_id: "acceptance-1000".into(),
        solar_time: 12.0,
        dtm: Grid::zeros(n, n),
        dsm: Grid::zeros(n, n),
        rgb: [Grid::zeros(n, n), Grid::zeros(n, n), Grid::zeros(n, n)],
        stack: assemble_stack(radiation, shade, skyview, tgi, height).unwrap(),
        thermal,
        met: MetVector::default(),
    }
}

#[test]
fn criterion_3_pipeline_arithmetic() {
    let mut failures = Vec::new();

    // Tile counts vs brute-force enumeration, every (k, stride) pair.
    let scene = big_flat_scene(3301);
    for &k in &[9usize, 15, 21, 31, 47, 63, 81] {
        for &stride in &[1usize, 11] {
            let (kept, excluded) = count_tiles(&scene, k, stride).unwrap();
            // Independent brute force straight off the raw grids.
            let mut b_kept = 0usize;
            let mut b_total = 0usize;
            let half = k / 2;
            let mut top = 0usize;
            while top + k <= 1000 {
                let mut left = 0usize;
                while left + k <= 1000 {
                    b_total += 1;
                    if scene.stack.tgi().get(top + half, left + half) as f64 <= 0.04 {
                        b_kept += 1;
                    }
                    left += stride;
                }
                top += stride;
            }
            let per_axis = (1000 - k) / stride + 1;
            if b_total != per_axis * per_axis || kept != b_kept || kept + excluded != b_total {
                failures.push(format!(
                    "k={k} stride={stride}: kept {kept}/{b_kept}, total {}/{b_total}",
                    kept + excluded
                ));
            }
        }
    }

    // Eq. 1 MSE against an independent compensated accumulator.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let errors: Vec<f64> = (0..1000).map(|_| rng.random_range(-20.0f64..20.0)).collect();
    let got = mse(&errors).unwrap();
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for e in &errors {
        let y = e * e - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let oracle = sum / errors.len() as f64;
    if ((got - oracle) / oracle).abs() > 1e-9 {
        failures.push(format!("mse {got} vs kahan {oracle}"));
    }

    // Standardized training channels: |mean| < 1e-6, |sd - 1| < 1e-6.
    let s1 = big_flat_scene(3302);
    let s2 = big_flat_scene(3303);
    let std =
        Standardizer::fit(&[(&s1.stack, &s1.met, &s1.thermal), (&s2.stack, &s2.met, &s2.thermal)]).unwrap();
    let z1 = std.standardize_stack(&s1.stack);
    let z2 = std.standardize_stack(&s2.stack);
    for ch in 0..5 {
        let vals: Vec<f64> = z1
            .channel(ch)
            .values()
            .iter()
            .chain(z2.channel(ch).values())
            .map(|&v| v as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        if mean.abs() >= 1e-6 || (var.sqrt() - 1.0).abs() >= 1e-6 {
            failures.push(format!("channel {ch}: mean {mean:.2e}, sd {}", var.sqrt()));
        }
    }

    report(
        "criterion 3 (pipeline arithmetic)",
        failures.is_empty(),
        &if failures.is_empty() {
            "tile counts exact for 7 sizes x 2 strides on 1000x1000; MSE to 1e-9; standardized channels to 1e-6".into()
        } else {
            failures.join("; ")
        },
    );
}

// ---------------------------------------------------------------- 4

/// The acceptance world: 512x512 at 0.15 m/px, rocky desert, flights at
/// sun elevations that cast real shadows.
fn acceptance_scenes(oracle: &OracleConfig, base_seed: u64) -> (Vec<SceneBundle>, Vec<SceneBundle>) {
    let world = WorldConfig {
        size: 512,
        rock_density: 0.05,
        rock_height_range: (0.3, 1.5),
        ..WorldConfig::default()
    };
    let train_times = [6.75, 8.5, 10.5, 13.5, 15.5, 17.5];
    let test_times = [9.0, 17.25];
    let train = train_times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            gen_flight(&WorldConfig { seed: base_seed + i as u64, ..world.clone() }, oracle, t).unwrap()
        })
        .collect();
    let test = test_times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            gen_flight(&WorldConfig { seed: base_seed + 100 + i as u64, ..world.clone() }, oracle, t)
                .unwrap()
        })
        .collect();
    (train, test)
}

fn acceptance_model() -> ModelConfig {
    // Slim enough to converge inside the epoch budget on a laptop; the
    // architecture (5-channel stem, residual stages, flatten + met
    // fusion, 128-unit head) is unchanged.
    ModelConfig { stem_width: 8, stage_widths: vec![8, 16, 32], ..ModelConfig::default() }
}

fn acceptance_sweep(sizes: Vec<usize>) -> SweepConfig {
    SweepConfig {
        tile_sizes: sizes,
        epochs: 40,
        lr: 2e-3,
        batch_size: 32,
        eval_points_per_scene: 12,
        ..SweepConfig::default()
    }
}

#[test]
fn criterion_4_spatial_scale_recovery() {
    let t0 = Instant::now();
    let oracle = OracleConfig { radiation_gain: 0.015, ..OracleConfig::default() };
    assert!((oracle.coupling_radius_m / 0.15 - 7.0).abs() < 1e-9, "R_c must be 7 px");
    assert!((oracle.noise_sd - 0.3).abs() < 1e-12);

    let (train, test) = acceptance_scenes(&oracle, 4400);
    let cfg = acceptance_sweep(vec![9, 15, 21, 31, 47]);
    let model_cfg = acceptance_model();
    let rep = run_sweep(&cfg, &model_cfg, &train, &test, None).expect("sweep");
    let by_size: BTreeMap<usize, f64> = rep.mse_by_size().into_iter().collect();
    println!("  coupled MSE by size: {by_size:?}");

    let mse9 = by_size[&9];
    let mse31 = by_size[&31];
    let ratio = mse31 / mse9;
    let sat = rep.saturation.as_ref().expect("five sizes give a saturation estimate");

    // Negative control: purely local oracle, same world and training.
    let local = OracleConfig { coupling_radius_m: 0.0, ..oracle.clone() };
    let (train_l, test_l) = acceptance_scenes(&local, 4400);
    let cfg_l = acceptance_sweep(vec![9, 47]);
    let rep_l = run_sweep(&cfg_l, &model_cfg, &train_l, &test_l, None).expect("control sweep");
    let by_size_l: BTreeMap<usize, f64> = rep_l.mse_by_size().into_iter().collect();
    println!("  local-control MSE by size: {by_size_l:?}");
    let control_ratio = by_size_l[&47] / by_size_l[&9];

    let elapsed = t0.elapsed().as_secs_f64();
    let pass_a = mse31 <= 0.5 * mse9;
    let pass_b = sat.pixels >= 15 && sat.pixels <= 31;
    let pass_c = control_ratio >= 0.8;
    let pass_t = elapsed < 3600.0;
    report(
        "criterion 4 (spatial-scale recovery)",
        pass_a && pass_b && pass_c && pass_t,
        &format!(
            "MSE(31)/MSE(9) = {ratio:.3} (need <= 0.5); saturation {} px (need 15..31); \
             control MSE(47)/MSE(9) = {control_ratio:.3} (need >= 0.8); {elapsed:.0}s (need < 3600)",
            sat.pixels
        ),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_stratification_integrity() {
    let mut failures = Vec::new();

    // Small worlds, two dayparts, a constant-prediction model.
    let oracle = OracleConfig::default();
    let world = |seed| WorldConfig { size: 160, seed, ..WorldConfig::default() };
    let scenes = vec![
        gen_flight(&world(50), &oracle, 6.5).unwrap(),
        gen_flight(&world(51), &oracle, 12.0).unwrap(),
        gen_flight(&world(52), &oracle, 17.5).unwrap(),
    ];
    let fit: Vec<_> = scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&fit).unwrap();
    let cfg = ModelConfig { stem_width: 4, stage_widths: vec![4], head_hidden: 8, ..ModelConfig::default() };
    let mut model = Model::<f32>::new(&cfg, 9, 1).unwrap();
    model.params.zero_fill();

    let mut grids = Vec::new();
    for s in &scenes {
        grids.push(thermotile::sweep::evaluate_scene(&model, s, &std, 4).unwrap());
    }
    let entries: Vec<(&Grid, &SceneBundle)> = grids.iter().zip(scenes.iter()).collect();
    let table = stratified_mse(&entries).unwrap();

    // Open + shade counts partition the valid centers.
    let stratum_total: usize = table.rows.iter().map(|r| r.n).sum();
    if stratum_total != table.overall_n {
        failures.push(format!("strata sum {stratum_total} != total {}", table.overall_n));
    }
    // Overall equals the count-weighted stratum mean to 1e-9 relative.
    let weighted: f64 =
        table.rows.iter().map(|r| r.mse * r.n as f64).sum::<f64>() / table.overall_n as f64;
    if ((weighted - table.overall_mse) / table.overall_mse).abs() > 1e-9 {
        failures.push(format!("weighted {weighted} vs overall {}", table.overall_mse));
    }
    // Counts recompute from the raw shade channel.
    let mut shade_count = 0usize;
    let mut open_count = 0usize;
    for (grid, scene) in &entries {
        for r in 0..grid.height {
            for c in 0..grid.width {
                if grid.get(r, c).is_finite() {
                    if scene.stack.shade().get(r, c) >= 0.5 {
                        shade_count += 1;
                    } else {
                        open_count += 1;
                    }
                }
            }
        }
    }
    let table_shade: usize = table
        .rows
        .iter()
        .filter(|r| r.microhabitat == thermotile::dataset::Microhabitat::Shade)
        .map(|r| r.n)
        .sum();
    if table_shade != shade_count || stratum_total - table_shade != open_count {
        failures.push("microhabitat counts disagree with the shade channel".into());
    }

    // Daypart bands exactly as published.
    use thermotile::dataset::{daypart_of, Daypart};
    let band_checks = [
        (6.0, Some(Daypart::Morning)),
        (7.0, Some(Daypart::Morning)),
        (7.5, None),
        (8.0, Some(Daypart::Midday)),
        (16.0, Some(Daypart::Midday)),
        (16.5, None),
        (17.0, Some(Daypart::Evening)),
        (18.0, Some(Daypart::Evening)),
        (18.5, None),
        (5.9, None),
    ];
    for (t, expect) in band_checks {
        match (daypart_of(t), expect) {
            (Ok(d), Some(e)) if d == e => {}
            (Err(_), None) => {}
            (got, _) => failures.push(format!("daypart({t}) = {got:?}")),
        }
    }

    report(
        "criterion 5 (stratification integrity)",
        failures.is_empty(),
        &if failures.is_empty() {
            format!(
                "strata partition {} centers; weighted mean matches to 1e-9; daypart bands exact",
                table.overall_n
            )
        } else {
            failures.join("; ")
        },
    );
}

// ---------------------------------------------------------------- 6

fn collect_artifacts(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                // Compare data artifacts; flights.json embeds absolute paths.
                let is_artifact = rel.ends_with(".bin")
                    || rel.ends_with(".ckpt")
                    || rel.ends_with(".mcg1")
                    || rel.ends_with("report.json")
                    || rel.ends_with("standardizer.json")
                    || rel.ends_with("manifest.json")
                    || rel.ends_with("history.csv");
                if is_artifact {
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_6_determinism() {
    let bin = env!("CARGO_BIN_EXE_thermotile");
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "seed": 99,
        "world": { "size": 128, "rock_density": 0.05 },
        "oracle": { "coupling_radius_m": 0.45 },
        "days": 3,
        "test_days": [2],
        "flight_times": [9.0, 15.0],
        "sweep": { "tile_sizes": [9, 15], "epochs": 2, "lr": 0.001, "eval_points_per_scene": 9 }
    });
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        for step in ["synth", "sweep"] {
            let mut command = std::process::Command::new(bin);
            command.args([step, "--threads", "1", "--config"]).arg(&cfg_path);
            if step == "sweep" {
                command.args(["--flights"]).arg(out.join("flights.json"));
            }
            command.args(["--out"]).arg(&out);
            let status = command.status().unwrap();
            assert!(status.success(), "{step} run {run} failed");
        }
        trees.push(collect_artifacts(&out));
    }
    let (a, b) = (&trees[0], &trees[1]);
    let same_files = a.keys().collect::<Vec<_>>() == b.keys().collect::<Vec<_>>();
    let mut diff = Vec::new();
    for (path, bytes) in a {
        if b.get(path) != Some(bytes) {
            diff.push(path.clone());
        }
    }
    let n_shards = a.keys().filter(|p| p.ends_with(".bin")).count();
    let n_ckpt = a.keys().filter(|p| p.ends_with(".ckpt")).count();
    let has_report = a.keys().any(|p| p.ends_with("report.json"));
    let pass = same_files && diff.is_empty() && n_shards >= 2 && n_ckpt >= 2 && has_report;
    report(
        "criterion 6 (determinism)",
        pass,
        &format!(
            "two cmd_sweep runs at --threads 1: {} artifacts bit-identical ({} shards, {} checkpoints, report.json); diffs: {:?}",
            a.len(),
            n_shards,
            n_ckpt,
            diff
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_format_roundtrips() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7007);

    // MCG1 with randomized payloads including NaN bit patterns.
    for trial in 0..50 {
        let w = rng.random_range(1..40);
        let h = rng.random_range(1..40);
        let values: Vec<f32> = (0..w * h)
            .map(|_| match rng.random_range(0..8) {
                0 => f32::from_bits(0x7fc0_0000 | rng.random::<u32>() & 0x003f_ffff), // NaN payloads
                1 => f32::NEG_INFINITY,
                _ => rng.random_range(-1e5f32..1e5),
            })
            .collect();
        let grid = Grid::new(w, h, 0.15, values).unwrap().with_name(format!("t{trial}"));
        let mut buf = Vec::new();
        write_grid(&grid, &mut buf).unwrap();
        let back = read_grid(buf.as_slice()).unwrap();
        if back.width != w || back.height != h || back.name != grid.name {
            failures.push(format!("mcg1 header trial {trial}"));
        }
        for (x, y) in grid.values().iter().zip(back.values()) {
            if x.to_bits() != y.to_bits() {
                failures.push(format!("mcg1 payload bits trial {trial}"));
                break;
            }
        }
    }

    // Checkpoints: randomized parameters round-trip bit-exactly.
    for trial in 0..5 {
        let cfg = ModelConfig {
            stem_width: 4 + trial % 3,
            stage_widths: vec![4, 8],
            head_hidden: 16,
            ..ModelConfig::default()
        };
        let mut model = Model::<f32>::new(&cfg, 9, 1000 + trial as u64).unwrap();
        for t in &mut model.params.tensors {
            for v in &mut t.data {
                *v = rng.random_range(-2.0f32..2.0);
            }
        }
        let meta = CheckpointMeta {
            config: cfg.clone(),
            tile_size: 9,
            epoch: trial,
            val_mse: rng.random_range(0.0..2.0),
            seed: trial as u64,
            tensors: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint_file(&path, &meta, &model.params, None).unwrap();
        let (meta2, tensors) = load_checkpoint_file(&path).unwrap();
        if meta2.epoch != trial || meta2.val_mse != meta.val_mse {
            failures.push(format!("ckpt meta trial {trial}"));
        }
        let restored = ParamSet {
            tensors: model
                .layout
                .params
                .iter()
                .zip(&tensors)
                .map(|(desc, (path, data))| {
                    if &desc.path != path {
                        failures.push(format!("ckpt order trial {trial}: {path}"));
                    }
                    thermotile::nn::params::ParamTensor { desc: desc.clone(), data: data.clone() }
                })
                .collect(),
        };
        for (a, b) in model.params.tensors.iter().zip(&restored.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                if x.to_bits() != y.to_bits() {
                    failures.push(format!("ckpt bits trial {trial} in {}", a.desc.path));
                    break;
                }
            }
        }
    }

    report(
        "criterion 7 (format round-trips)",
        failures.is_empty(),
        &if failures.is_empty() {
            "50 randomized MCG1 grids (NaN payloads included) and 5 checkpoints bit-exact".into()
        } else {
            failures.join("; ")
        },
    );
}
