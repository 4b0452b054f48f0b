//! Train one regression model at a single tile size on a small world
//! and watch validation loss pick the checkpoint.
//!
//!     cargo run --release --example train_single_size

use thermotile::dataset::{extract_tiles, records_to_batch, split_train_val};
use thermotile::features::Standardizer;
use thermotile::nn::{param_count, train_model, ModelConfig, TrainOptions};
use thermotile::sweep::{evaluate_scene, stratified_mse};
use thermotile::synth::{gen_flight, OracleConfig, WorldConfig};

fn main() {
    let oracle = OracleConfig::default();
    let world = |seed| WorldConfig { size: 256, seed, ..WorldConfig::default() };
    let train_scenes = vec![
        gen_flight(&world(1), &oracle, 9.0).unwrap(),
        gen_flight(&world(2), &oracle, 14.0).unwrap(),
    ];
    let test_scene = gen_flight(&world(9), &oracle, 11.0).unwrap();

    let fit: Vec<_> = train_scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&fit).unwrap();

    let k = 15;
    let cfg = ModelConfig::default();
    println!("tile size {k}: {} parameters", param_count(&cfg, k).unwrap());

    let mut records = Vec::new();
    for s in &train_scenes {
        records.extend(extract_tiles(s, &std, k, 11).unwrap());
    }
    println!("{} tiles", records.len());
    let (train, val) = split_train_val(records, 0.8, 3).unwrap();

    let opts = TrainOptions { epochs: 20, batch_size: 64, lr: 1e-3, seed: 7, ..Default::default() };
    let result = train_model::<f32>(&cfg, &records_to_batch(&train, k), &records_to_batch(&val, k), &opts)
        .expect("training");

    for h in result.history.iter().step_by(4) {
        println!("epoch {:>3}  train {:.4}  val {:.4}", h.epoch, h.train_mse, h.val_mse);
    }
    println!("best epoch {} with val MSE {:.4}", result.best_epoch, result.best_val_mse);

    let se = evaluate_scene(&result.model, &test_scene, &std, 4).unwrap();
    let table = stratified_mse(&[(&se, &test_scene)]).unwrap();
    println!("held-out scene MSE {:.4} C^2 over {} centers", table.overall_mse, table.overall_n);
    for row in &table.rows {
        println!("  {:<6} {:<8} mse {:.4} (n={})", row.microhabitat.name(), row.daypart.name(), row.mse, row.n);
    }
}
