//! Pilot: spatial-scale recovery dynamics on the 512x512 scenario —
//! two sizes, full epochs, plus the purely local negative control.

use std::time::Instant;

use thermotile::dataset::{extract_tiles, records_to_batch, split_train_val};
use thermotile::features::Standardizer;
use thermotile::nn::{train_model, ModelConfig, TrainOptions};
use thermotile::sweep::{evaluate_scene, stratified_mse};
use thermotile::synth::{gen_flight, OracleConfig, SceneBundle, WorldConfig};

fn gen_scenes(oracle: &OracleConfig, base_seed: u64) -> (Vec<SceneBundle>, Vec<SceneBundle>) {
    let world = WorldConfig {
        size: 512,
        rock_density: 0.05,
        rock_height_range: (0.3, 1.5),
        ..WorldConfig::default()
    };
    let train_times = [6.75, 8.5, 10.5, 13.5, 15.5, 17.5];
    let test_times = [9.0, 17.25];
    let mut train = Vec::new();
    for (i, &t) in train_times.iter().enumerate() {
        let w = WorldConfig { seed: base_seed + i as u64, ..world.clone() };
        train.push(gen_flight(&w, oracle, t).unwrap());
    }
    let mut test = Vec::new();
    for (i, &t) in test_times.iter().enumerate() {
        let w = WorldConfig { seed: base_seed + 100 + i as u64, ..world.clone() };
        test.push(gen_flight(&w, oracle, t).unwrap());
    }
    (train, test)
}

fn run(tag: &str, oracle: &OracleConfig, sizes: &[usize], epochs: usize, lr: f64) {
    let t0 = Instant::now();
    let (train_scenes, test_scenes) = gen_scenes(oracle, 100);
    println!("[{tag}] scenes in {:.0}s", t0.elapsed().as_secs_f64());
    for s in &train_scenes {
        let sf = s.stack.shade().values().iter().filter(|&&v| v == 1.0).count() as f64 / (512.0f64 * 512.0);
        let tv: Vec<f64> = s.thermal.values().iter().map(|&v| v as f64).collect();
        let tm = tv.iter().sum::<f64>() / tv.len() as f64;
        let tsd = (tv.iter().map(|v| (v - tm) * (v - tm)).sum::<f64>() / tv.len() as f64).sqrt();
        println!("[{tag}] t={:.2} shade {:.3} thermal sd {:.3}", s.solar_time, sf, tsd);
    }
    let fit: Vec<_> = train_scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&fit).unwrap();
    let cfg = ModelConfig {
        stem_width: 8,
        stage_widths: vec![8, 16, 32],
        ..ModelConfig::default()
    };
    for &k in sizes {
        let t1 = Instant::now();
        let mut records = Vec::new();
        for s in &train_scenes {
            records.extend(extract_tiles(s, &std, k, 11).unwrap());
        }
        let n_rec = records.len();
        let (tr, va) = split_train_val(records, 0.8, 1).unwrap();
        let opts = TrainOptions { epochs, batch_size: 32, lr, seed: 5, ..Default::default() };
        let result =
            train_model::<f32>(&cfg, &records_to_batch(&tr, k), &records_to_batch(&va, k), &opts).unwrap();
        let mut grids = Vec::new();
        for sc in &test_scenes {
            grids.push(evaluate_scene(&result.model, sc, &std, 4).unwrap());
        }
        let entries: Vec<(&thermotile::grid::Grid, &SceneBundle)> =
            grids.iter().zip(test_scenes.iter()).collect();
        let table = stratified_mse(&entries).unwrap();
        let hist: Vec<f64> = result
            .history
            .iter()
            .step_by(5)
            .map(|h| (h.val_mse * 1000.0).round() / 1000.0)
            .collect();
        println!(
            "[{tag}] k={k}: tiles {n_rec}, best val {:.4} @ep{}, TEST MSE {:.4} (n={}), {:.0}s, val hist {:?}",
            result.best_val_mse,
            result.best_epoch,
            table.overall_mse,
            table.overall_n,
            t1.elapsed().as_secs_f64(),
            hist
        );
    }
}

fn main() {
    let coupled = OracleConfig {
        radiation_gain: 0.015,
        ..OracleConfig::default()
    };
    run("coupled", &coupled, &[9, 15, 21, 31, 47], 40, 2e-3);
    let local = OracleConfig { coupling_radius_m: 0.0, radiation_gain: 0.015, ..OracleConfig::default() };
    run("local", &local, &[9, 47], 40, 2e-3);
}
