//! Generate one synthetic flight and inspect what the pipeline built:
//! terrain, the five feature layers, meteorology, and the ground-truth
//! thermal map. Pass a directory argument to persist the scene.
//!
//!     cargo run --release --example synth_scene -- /tmp/demo_scene

use thermotile::grid::Grid;
use thermotile::synth::{gen_flight, save_scene, OracleConfig, WorldConfig};

fn stats(name: &str, g: &Grid) {
    let vals: Vec<f64> = g.values().iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("  {name:<10} mean {mean:>9.3}  sd {sd:>8.3}  min {min:>9.3}  max {max:>9.3}");
}

fn main() {
    let world = WorldConfig { size: 256, seed: 7, ..WorldConfig::default() };
    let oracle = OracleConfig::default();
    let scene = gen_flight(&world, &oracle, 9.5).expect("flight");

    println!("flight {} at solar time {}", scene.flight_id, scene.solar_time);
    println!("scene {}x{} at {} m/px", scene.dtm.width, scene.dtm.height, scene.dtm.resolution_m);
    stats("dtm", &scene.dtm);
    stats("dsm", &scene.dsm);
    for (name, grid) in scene.stack.as_grid_stack().iter() {
        stats(name, grid);
    }
    stats("thermal", &scene.thermal);

    let shade_frac = scene.stack.shade().values().iter().filter(|&&v| v == 1.0).count() as f64
        / (scene.stack.width() * scene.stack.height()) as f64;
    println!("shade fraction {shade_frac:.3}");
    println!("met vector {:?}", scene.met.to_array());

    if let Some(dir) = std::env::args().nth(1) {
        save_scene(&scene, &dir, world.seed).expect("save");
        println!("scene written to {dir}");
    }
}
