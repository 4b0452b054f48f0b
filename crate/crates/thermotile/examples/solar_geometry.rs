//! Solar geometry over a day, plus cast shadows and skyview around a
//! single pillar: the spatial physics behind the radiation layer.
//!
//!     cargo run --release --example solar_geometry

use thermotile::grid::Grid;
use thermotile::solar::{cast_shadow, skyview, sun_position, SolarConfig};

fn main() {
    let base = SolarConfig::default(); // 31.4 N, day 172

    println!("hour   elevation   azimuth");
    for h in 5..=19 {
        let sun = sun_position(&base.at_time(h as f64));
        println!(
            "{:>4}   {:>8.2}   {:>8.2}",
            h,
            sun.elevation.to_degrees(),
            sun.azimuth.to_degrees()
        );
    }

    // A 2 m pillar in the middle of a flat 64x64 scene (15 cm pixels).
    let size = 64;
    let mut dsm = Grid::zeros(size, size);
    dsm.set(size / 2, size / 2, 2.0);

    println!("\nshadow length north of the pillar vs sun elevation:");
    for elev_deg in [15.0f64, 30.0, 45.0, 60.0, 75.0] {
        let sun = thermotile::solar::SunPosition {
            elevation: elev_deg.to_radians(),
            azimuth: std::f64::consts::PI, // due south
        };
        let shade = cast_shadow(&dsm, sun, 40.0).unwrap();
        let mut run = 0;
        for d in 1..size / 2 {
            if shade.get(size / 2 - d, size / 2) == 1.0 {
                run = d;
            } else {
                break;
            }
        }
        let analytic = 2.0 / elev_deg.to_radians().tan() / 0.15;
        println!("  elev {elev_deg:>4.0} deg: {run:>3} px (h/tan = {analytic:>5.1} px)");
    }

    let svf = skyview(&dsm, 16, 5.0).unwrap();
    println!("\nskyview next to the pillar {:.4}", svf.get(size / 2, size / 2 + 2));
    println!("skyview in the open        {:.4}", svf.get(10, 10));
}
