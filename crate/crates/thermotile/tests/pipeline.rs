//! Cross-module integration: scenes through datasets through training
//! through evaluation on small worlds.

use thermotile::dataset::{assign_flights, extract_tiles, records_to_batch, split_train_val};
use thermotile::features::Standardizer;
use thermotile::grid::Grid;
use thermotile::nn::{
    load_checkpoint_file, save_checkpoint_file, train_model, CheckpointMeta, Model, ModelConfig,
    ParamSet, TileBatch, TrainOptions, Workspace,
};
use thermotile::sweep::{run_sweep, SweepConfig};
use thermotile::synth::{gen_flight, load_scene, save_scene, OracleConfig, SceneBundle, WorldConfig};

fn small_world(seed: u64) -> WorldConfig {
    WorldConfig { size: 160, seed, ..WorldConfig::default() }
}

fn flights(oracle: &OracleConfig, specs: &[(u64, f64)]) -> Vec<SceneBundle> {
    specs
        .iter()
        .map(|&(seed, time)| gen_flight(&small_world(seed), oracle, time).unwrap())
        .collect()
}

#[test]
fn purely_local_oracle_is_learnable_from_small_tiles() {
    // With zero coupling and zero noise the label is an affine function
    // of the center pixel's features: a 9x9 model on a ~5k-tile desk
    // dataset drives validation MSE below 0.05 C^2 within 100 epochs.
    // (Threshold from the pilot runs recorded in examples/pilot notes.)
    let oracle = OracleConfig { coupling_radius_m: 0.0, noise_sd: 0.0, ..OracleConfig::default() };
    let scenes = flights(&oracle, &[(1, 9.0), (2, 12.0), (3, 15.0)]);
    let fit: Vec<_> = scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&fit).unwrap();
    let mut records = Vec::new();
    for s in &scenes {
        records.extend(extract_tiles(s, &std, 9, 4).unwrap());
    }
    assert!(records.len() > 4000, "want a ~5k tile dataset, got {}", records.len());
    let (train, val) = split_train_val(records, 0.8, 1).unwrap();
    let cfg = ModelConfig { stem_width: 8, stage_widths: vec![8, 16, 32], ..ModelConfig::default() };
    let opts = TrainOptions { epochs: 100, batch_size: 16, lr: 3e-3, seed: 3, ..Default::default() };
    let result = train_model::<f32>(
        &cfg,
        &records_to_batch(&train, 9),
        &records_to_batch(&val, 9),
        &opts,
    )
    .unwrap();
    assert!(
        result.best_val_mse < 0.05,
        "affine target should be learnable: val MSE {}",
        result.best_val_mse
    );
}

#[test]
fn mini_sweep_end_to_end_with_artifacts() {
    let oracle = OracleConfig { coupling_radius_m: 0.6, ..OracleConfig::default() };
    let train_scenes = flights(&oracle, &[(10, 9.0), (11, 13.0)]);
    let test_scenes = flights(&oracle, &[(20, 11.0)]);
    let cfg = SweepConfig {
        tile_sizes: vec![9, 15],
        epochs: 2,
        lr: 1e-3,
        eval_points_per_scene: 9,
        ..SweepConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_sweep(&cfg, &ModelConfig::default(), &train_scenes, &test_scenes, Some(dir.path()))
        .unwrap();

    assert_eq!(report.sizes.len(), 2);
    for s in &report.sizes {
        assert!(s.mse > 0.0 && s.n > 0);
        let strata_n: usize = s.strata.iter().map(|r| r.n).sum();
        assert_eq!(strata_n, s.n);
        let weighted: f64 = s.strata.iter().map(|r| r.mse * r.n as f64).sum::<f64>() / s.n as f64;
        assert!(((weighted - s.mse) / s.mse).abs() < 1e-9);
    }
    // Two sizes: no saturation estimate, but a warning instead.
    assert!(report.saturation.is_none());
    assert!(report.warnings.iter().any(|w| w.contains("saturation")));
    assert!(!report.feature_curves.is_empty());

    for path in [
        "standardizer.json",
        "datasets/k09/manifest.json",
        "datasets/k09/train.bin",
        "datasets/k15/manifest.json",
        "models/k09/checkpoint.ckpt",
        "models/k09/history.csv",
        "models/k15/checkpoint.ckpt",
        "report/report.json",
        "report/mse_by_size.csv",
        "report/strata.csv",
        "report/feature_curves.csv",
    ] {
        assert!(dir.path().join(path).exists(), "missing artifact {path}");
    }
    // One SE grid per (scene, size).
    let se_count = std::fs::read_dir(dir.path().join("se_grids")).unwrap().count();
    assert_eq!(se_count, 2);

    // The stored checkpoint reproduces the reported model exactly.
    let (meta, tensors) = load_checkpoint_file(dir.path().join("models/k09/checkpoint.ckpt")).unwrap();
    assert_eq!(meta.tile_size, 9);
    let layout = thermotile::nn::build_layout(&meta.config, 9).unwrap();
    assert_eq!(tensors.len(), layout.params.len());
}

#[test]
fn scene_holdout_keeps_flights_apart() {
    let oracle = OracleConfig::default();
    let scenes = flights(&oracle, &[(30, 9.0), (31, 12.0), (32, 15.0), (33, 10.0)]);
    let test_ids = vec![scenes[1].flight_id.clone(), scenes[3].flight_id.clone()];
    let (train, test) = assign_flights(scenes, &test_ids).unwrap();
    let std_inputs: Vec<_> = train.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&std_inputs).unwrap();
    let mut train_tiles = Vec::new();
    for s in &train {
        train_tiles.extend(extract_tiles(s, &std, 9, 11).unwrap());
    }
    let mut test_tiles = Vec::new();
    for s in &test {
        test_tiles.extend(extract_tiles(s, &std, 9, 11).unwrap());
    }
    for t in &train_tiles {
        assert!(!test_ids.contains(&t.flight_id));
    }
    for t in &test_tiles {
        assert!(test_ids.contains(&t.flight_id));
    }
}

#[test]
fn standardizer_is_frozen_across_test_application() {
    // Fitting on training scenes and applying to a test scene must not
    // mutate the stored statistics (no leakage).
    let oracle = OracleConfig::default();
    let train_scenes = flights(&oracle, &[(40, 9.0), (41, 14.0)]);
    let test_scene = &flights(&oracle, &[(50, 11.0)])[0];
    let fit: Vec<_> = train_scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&fit).unwrap();
    let fp_before = std.fingerprint();
    let _ = std.standardize_stack(&test_scene.stack);
    let _ = std.standardize_met(&test_scene.met);
    let _ = extract_tiles(test_scene, &std, 9, 11).unwrap();
    assert_eq!(std.fingerprint(), fp_before);
}

#[test]
fn scene_save_load_preserves_training_behavior() {
    let oracle = OracleConfig::default();
    let scene = flights(&oracle, &[(60, 10.0)]).remove(0);
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path(), 60).unwrap();
    let back = load_scene(dir.path()).unwrap();
    let std = Standardizer::fit(&[(&scene.stack, &scene.met, &scene.thermal)]).unwrap();
    let a = extract_tiles(&scene, &std, 9, 11).unwrap();
    let b = extract_tiles(&back, &std, 9, 11).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.label.to_bits(), y.label.to_bits());
        for (p, q) in x.inputs.iter().zip(&y.inputs) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }
}

#[test]
fn checkpoint_restores_an_identical_model() {
    let cfg = ModelConfig { stem_width: 4, stage_widths: vec![6], head_hidden: 16, ..ModelConfig::default() };
    let model = Model::<f32>::new(&cfg, 9, 99).unwrap();
    let meta = CheckpointMeta {
        config: cfg.clone(),
        tile_size: 9,
        epoch: 7,
        val_mse: 0.123,
        seed: 99,
        tensors: Vec::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint_file(&path, &meta, &model.params, None).unwrap();
    let (meta2, tensors) = load_checkpoint_file(&path).unwrap();
    assert_eq!(meta2.epoch, 7);
    let params = ParamSet {
        tensors: model
            .layout
            .params
            .iter()
            .zip(&tensors)
            .map(|(desc, (path, data))| {
                assert_eq!(&desc.path, path);
                thermotile::nn::params::ParamTensor { desc: desc.clone(), data: data.clone() }
            })
            .collect(),
    };
    let restored = Model::<f32>::from_params(&cfg, 9, params, None).unwrap();

    // Identical predictions on a random batch.
    let mut tiles = thermotile::nn::Tensor4::<f32>::zeros([2, 5, 9, 9]);
    for (i, v) in tiles.data.iter_mut().enumerate() {
        *v = ((i * 37) % 101) as f32 / 50.0 - 1.0;
    }
    let met: Vec<f32> = (0..16).map(|i| i as f32 / 8.0).collect();
    let mut ws = Workspace::new();
    let a = model.forward(&tiles, &met, &mut ws).unwrap();
    let b = restored.forward(&tiles, &met, &mut ws).unwrap();
    assert_eq!(a[0].to_bits(), b[0].to_bits());
    assert_eq!(a[1].to_bits(), b[1].to_bits());
}

#[test]
fn training_rejects_empty_sets() {
    let cfg = ModelConfig::default();
    let empty = TileBatch::new(9);
    let opts = TrainOptions::default();
    assert!(train_model::<f32>(&cfg, &empty, &empty, &opts).is_err());
}

#[test]
fn corrupt_scene_fails_loading_cleanly() {
    let oracle = OracleConfig::default();
    let scene = flights(&oracle, &[(70, 10.0)]).remove(0);
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path(), 70).unwrap();
    // Damage one grid's magic.
    let path = dir.path().join("thermal.mcg1");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    assert!(load_scene(dir.path()).is_err());
}

#[test]
fn evaluate_scene_marks_vegetation_as_nan() {
    let oracle = OracleConfig::default();
    let world = WorldConfig { vegetation_density: 0.03, ..small_world(80) };
    // Mid-morning sun so the shade channel is not degenerate.
    let scene = gen_flight(&world, &oracle, 9.0).unwrap();
    let std = Standardizer::fit(&[(&scene.stack, &scene.met, &scene.thermal)]).unwrap();
    let cfg = ModelConfig { stem_width: 4, stage_widths: vec![4], head_hidden: 8, ..ModelConfig::default() };
    let mut model = Model::<f32>::new(&cfg, 9, 1).unwrap();
    model.params.zero_fill();
    let se = thermotile::sweep::evaluate_scene(&model, &scene, &std, 4).unwrap();
    let mut veg_checked = 0;
    for r in (4..156).step_by(4) {
        for c in (4..156).step_by(4) {
            if scene.stack.tgi().get(r, c) as f64 > thermotile::features::TGI_THRESHOLD {
                assert!(se.get(r, c).is_nan(), "vegetated center ({r},{c}) evaluated");
                veg_checked += 1;
            }
        }
    }
    assert!(veg_checked > 0, "world produced no vegetated eval centers");
    let _ = Grid::zeros(2, 2);
}
