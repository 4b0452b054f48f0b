//! Cut scenes into labeled tiles: sliding window, vegetation exclusion,
//! 80/20 split, stratum bookkeeping, and the on-disk shard format.
//!
//!     cargo run --release --example tile_datasets

use thermotile::dataset::{extract_tiles, load_dataset, positions_per_axis, split_train_val, write_dataset};
use thermotile::features::Standardizer;
use thermotile::synth::{gen_flight, OracleConfig, WorldConfig};

fn main() {
    let oracle = OracleConfig::default();
    let mut scenes = Vec::new();
    for (day, time) in [(0u64, 9.0f64), (1, 13.0)] {
        let world = WorldConfig { size: 256, seed: 20 + day, vegetation_density: 0.015, ..WorldConfig::default() };
        scenes.push(gen_flight(&world, &oracle, time).expect("flight"));
    }
    let fit: Vec<_> = scenes.iter().map(|s| (&s.stack, &s.met, &s.thermal)).collect();
    let std = Standardizer::fit(&fit).unwrap();

    let (k, stride) = (15usize, 11usize);
    let per_axis = positions_per_axis(256, k, stride);
    println!("window grid: {per_axis} x {per_axis} positions per scene");

    let mut records = Vec::new();
    for s in &scenes {
        let recs = extract_tiles(s, &std, k, stride).unwrap();
        println!(
            "flight {}: {} tiles ({} excluded as vegetation)",
            s.flight_id,
            recs.len(),
            per_axis * per_axis - recs.len()
        );
        records.extend(recs);
    }

    let (train, val) = split_train_val(records, 0.8, 42).unwrap();
    println!("split: {} train / {} val", train.len(), val.len());

    let dir = std::env::temp_dir().join("thermotile_tiles_demo");
    let manifest = write_dataset(&dir, k, stride, &std.fingerprint(), &train, &val).unwrap();
    println!("\nmanifest strata (train):");
    for s in &manifest.train.strata {
        println!("  {:<6} {:<8} {}", s.microhabitat.name(), s.daypart.name(), s.count);
    }
    let (_, train_back, _) = load_dataset(&dir).unwrap();
    assert_eq!(train_back.len(), train.len());
    println!("shards round-tripped from {}", dir.display());
}
