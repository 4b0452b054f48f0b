//! Pilot: time scene generation and per-epoch training cost at the
//! acceptance scenario scale, and report early MSE-by-size behavior.

use std::time::Instant;

use thermotile::dataset::{extract_tiles, records_to_batch, split_train_val};
use thermotile::features::Standardizer;
use thermotile::nn::{train_model, ModelConfig, TrainOptions};
use thermotile::sweep::{evaluate_scene, stratified_mse};
use thermotile::synth::{gen_flight, OracleConfig, WorldConfig};

fn main() {
    let t0 = Instant::now();
    let world = WorldConfig { size: 512, seed: 100, ..WorldConfig::default() };
    let oracle = OracleConfig::default();
    let train_times = [6.5, 9.5, 12.0];
    let mut scenes = Vec::new();
    for (i, &t) in train_times.iter().enumerate() {
        let w = WorldConfig { seed: 100 + i as u64, ..world.clone() };
        scenes.push(gen_flight(&w, &oracle, t).unwrap());
    }
    let test_scene = gen_flight(&WorldConfig { seed: 200, ..world.clone() }, &oracle, 10.5).unwrap();
    println!("scene gen: {:.1}s for 4 scenes", t0.elapsed().as_secs_f64());

    let fit: Vec<_> = scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&fit).unwrap();
    println!("label mean {:.2}", std.label_mean);

    // Label spatial SD estimate.
    let lv: Vec<f64> = scenes[2].thermal.values().iter().map(|&v| v as f64).collect();
    let lm = lv.iter().sum::<f64>() / lv.len() as f64;
    let lsd = (lv.iter().map(|v| (v - lm) * (v - lm)).sum::<f64>() / lv.len() as f64).sqrt();
    println!("noon thermal SD {:.3} C", lsd);
    let shade_frac = scenes[2].stack.shade().values().iter().filter(|&&v| v == 1.0).count() as f64
        / (512.0 * 512.0);
    println!("noon shade fraction {:.3}", shade_frac);

    let cfg = ModelConfig::default();
    for k in [9usize, 31] {
        let t1 = Instant::now();
        let mut records = Vec::new();
        for s in &scenes {
            records.extend(extract_tiles(s, &std, k, 11).unwrap());
        }
        let n = records.len();
        let (tr, va) = split_train_val(records, 0.8, 1).unwrap();
        let train = records_to_batch(&tr, k);
        let val = records_to_batch(&va, k);
        println!("k={k}: {} tiles extracted in {:.1}s", n, t1.elapsed().as_secs_f64());

        let t2 = Instant::now();
        let opts = TrainOptions { epochs: 3, batch_size: 64, lr: 1e-3, seed: 5, ..Default::default() };
        let result = train_model::<f32>(&cfg, &train, &val, &opts).unwrap();
        let per_epoch = t2.elapsed().as_secs_f64() / 3.0;
        println!(
            "k={k}: {:.1}s/epoch; val MSE by epoch: {:?}",
            per_epoch,
            result.history.iter().map(|h| (h.val_mse * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );

        let t3 = Instant::now();
        let se = evaluate_scene(&result.model, &test_scene, &std, 4).unwrap();
        let table = stratified_mse(&[(&se, &test_scene)]).unwrap();
        println!(
            "k={k}: eval {:.1}s, test MSE {:.4} over {} centers",
            t3.elapsed().as_secs_f64(),
            table.overall_mse,
            table.overall_n
        );
    }
    println!("total pilot: {:.1}s", t0.elapsed().as_secs_f64());
}
