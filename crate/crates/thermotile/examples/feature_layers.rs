//! Derive the five feature layers from raw rasters and fit the
//! standardizer: the exact preprocessing that feeds the network.
//!
//!     cargo run --release --example feature_layers

use thermotile::features::{tgi, vegetation_mask, Standardizer, TGI_THRESHOLD};
use thermotile::synth::{gen_flight, OracleConfig, WorldConfig};
use thermotile::terrain::{feature_height, slope_aspect, slope_sd_radius};

fn main() {
    let world = WorldConfig { size: 256, seed: 11, vegetation_density: 0.02, ..WorldConfig::default() };
    let scene = gen_flight(&world, &OracleConfig::default(), 10.0).expect("flight");

    // Terrain derivatives from the surface model.
    let terrain = slope_aspect(&scene.dsm).unwrap();
    let height = feature_height(&scene.dsm, &scene.dtm).unwrap();
    let slope_sd = slope_sd_radius(&terrain.slope, 2.0).unwrap();
    let interior: Vec<f64> = terrain
        .slope
        .values()
        .iter()
        .filter(|v| v.is_finite())
        .map(|&v| (v as f64).to_degrees())
        .collect();
    println!(
        "slope: mean {:.2} deg, max {:.2} deg",
        interior.iter().sum::<f64>() / interior.len() as f64,
        interior.iter().cloned().fold(0.0, f64::max)
    );
    println!("object height max {:.2} m", height.values().iter().cloned().fold(0.0f32, f32::max));
    println!(
        "slope sd (2 m disk) max {:.3}",
        slope_sd.values().iter().filter(|v| v.is_finite()).cloned().fold(0.0f32, f32::max)
    );

    // Greenness and the vegetation mask.
    let greenness = tgi(&scene.rgb[0], &scene.rgb[1], &scene.rgb[2]).unwrap();
    let mask = vegetation_mask(&greenness, TGI_THRESHOLD);
    let veg_frac = mask.values().iter().sum::<f32>() as f64 / mask.values().len() as f64;
    println!("vegetated fraction {veg_frac:.4} (tgi > {TGI_THRESHOLD})");

    // Standardization: fit on this scene, check the transform.
    let std = Standardizer::fit(&[(&scene.stack, &scene.met, &scene.thermal)]).unwrap();
    println!("\nchannel statistics:");
    for (i, name) in std.channel_names.iter().enumerate() {
        println!("  {name:<10} mean {:>9.3}  sd {:>8.3}", std.channel_mean[i], std.channel_sd[i]);
    }
    println!("label mean {:.2} C, fingerprint {}", std.label_mean, &std.fingerprint()[..16]);

    let z = std.standardize_stack(&scene.stack);
    let zvals: Vec<f64> = z.radiation().values().iter().map(|&v| v as f64).collect();
    let zmean = zvals.iter().sum::<f64>() / zvals.len() as f64;
    println!("standardized radiation mean {zmean:.2e} (should be ~0)");
}
