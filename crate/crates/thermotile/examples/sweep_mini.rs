//! A miniature end-to-end sweep: three tile sizes on small worlds,
//! report table, stratified errors, and the saturation estimate.
//! Writes the full artifact tree when given an output directory.
//!
//!     cargo run --release --example sweep_mini -- /tmp/mini_sweep

use thermotile::nn::ModelConfig;
use thermotile::sweep::{run_sweep, SweepConfig};
use thermotile::synth::{gen_flight, OracleConfig, WorldConfig};

fn main() {
    let oracle = OracleConfig { coupling_radius_m: 0.6, ..OracleConfig::default() };
    let world = |seed| WorldConfig { size: 192, seed, ..WorldConfig::default() };

    let train_scenes = vec![
        gen_flight(&world(1), &oracle, 8.5).unwrap(),
        gen_flight(&world(2), &oracle, 11.0).unwrap(),
        gen_flight(&world(3), &oracle, 15.0).unwrap(),
    ];
    let test_scenes = vec![
        gen_flight(&world(8), &oracle, 10.0).unwrap(),
        gen_flight(&world(9), &oracle, 14.0).unwrap(),
    ];

    let sweep_cfg = SweepConfig {
        tile_sizes: vec![9, 15, 21],
        epochs: 12,
        lr: 1e-3,
        eval_points_per_scene: 12,
        ..SweepConfig::default()
    };
    let model_cfg = ModelConfig::default();

    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let report = run_sweep(&sweep_cfg, &model_cfg, &train_scenes, &test_scenes, out.as_deref())
        .expect("sweep");

    println!("tile_size  test_mse      n");
    for s in &report.sizes {
        println!("{:>9}  {:>8.4}  {:>7}", s.tile_size, s.mse, s.n);
    }
    match &report.saturation {
        Some(sat) => println!("saturation: {} px = {:.2} m", sat.pixels, sat.meters),
        None => println!("saturation: not estimated"),
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if let Some(dir) = out {
        println!("artifacts under {}", dir.display());
    }
}
