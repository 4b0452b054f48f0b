//! Terrain derivatives from elevation rasters: slope, aspect, object
//! height, and local slope variability.
//!
//! Slope and aspect use the Horn 3x3 weighted finite-difference method.
//! Aspect is the downslope (facing) direction, 0 = north, clockwise,
//! matching the solar azimuth convention; it is NaN where slope is zero.
//! The border ring, where the 3x3 window is incomplete, is NaN.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Slope (radians, >= 0) and aspect (radians in [0, 2pi), NaN on flats).
#[derive(Debug, Clone)]
pub struct TerrainDerivatives {
    pub slope: Grid,
    pub aspect: Grid,
}

/// Horn slope/aspect over a DSM. Requires at least 3x3.
pub fn slope_aspect(dsm: &Grid) -> Result<TerrainDerivatives> {
    if dsm.width < 3 || dsm.height < 3 {
        return Err(Error::dimension("slope_aspect needs at least a 3x3 grid"));
    }
    let (w, h) = (dsm.width, dsm.height);
    let res = dsm.resolution_m;
    let mut slope = Grid::filled(w, h, f32::NAN).with_resolution(res);
    let mut aspect = Grid::filled(w, h, f32::NAN).with_resolution(res);

    let slope_rows: Vec<&mut [f32]> = slope.rows_mut().collect();
    let aspect_rows: Vec<&mut [f32]> = aspect.rows_mut().collect();
    slope_rows
        .into_par_iter()
        .zip(aspect_rows)
        .enumerate()
        .for_each(|(r, (srow, arow))| {
            if r == 0 || r == h - 1 {
                return;
            }
            for c in 1..w - 1 {
                // Horn window, z1 top-left .. z9 bottom-right.
                let z1 = dsm.get(r - 1, c - 1) as f64;
                let z2 = dsm.get(r - 1, c) as f64;
                let z3 = dsm.get(r - 1, c + 1) as f64;
                let z4 = dsm.get(r, c - 1) as f64;
                let z6 = dsm.get(r, c + 1) as f64;
                let z7 = dsm.get(r + 1, c - 1) as f64;
                let z8 = dsm.get(r + 1, c) as f64;
                let z9 = dsm.get(r + 1, c + 1) as f64;
                // dz/dx toward east (+col), dz/dy toward north (-row).
                let dz_de = ((z3 + 2.0 * z6 + z9) - (z1 + 2.0 * z4 + z7)) / (8.0 * res);
                let dz_dn = ((z1 + 2.0 * z2 + z3) - (z7 + 2.0 * z8 + z9)) / (8.0 * res);
                if !dz_de.is_finite() || !dz_dn.is_finite() {
                    continue;
                }
                let grad = dz_de.hypot(dz_dn);
                srow[c] = grad.atan() as f32;
                if grad > 0.0 {
                    // Downslope direction is -gradient; angle from north, CW.
                    let mut az = (-dz_de).atan2(-dz_dn);
                    if az < 0.0 {
                        az += std::f64::consts::TAU;
                    }
                    arow[c] = az as f32;
                }
            }
        });
    Ok(TerrainDerivatives { slope, aspect })
}

/// Object height: DSM minus DTM, clamped at zero from below.
pub fn feature_height(dsm: &Grid, dtm: &Grid) -> Result<Grid> {
    if !dsm.same_shape(dtm) {
        return Err(Error::dimension("feature_height: dsm and dtm differ in shape"));
    }
    let mut out = Grid::zeros(dsm.width, dsm.height).with_resolution(dsm.resolution_m);
    for (o, (&a, &b)) in out
        .values_mut()
        .iter_mut()
        .zip(dsm.values().iter().zip(dtm.values()))
    {
        *o = (a - b).max(0.0);
    }
    Ok(out)
}

/// Pixel offsets of the disk with center distance <= radius (in pixels).
pub(crate) fn disk_offsets(radius_px: f64) -> Vec<(isize, isize)> {
    let r = radius_px.floor() as isize + 1;
    let r2 = radius_px * radius_px;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx * dx + dy * dy) as f64 <= r2 {
                offsets.push((dy, dx));
            }
        }
    }
    offsets
}

/// Population SD of slope over the disk of pixels whose center distance
/// is at most `radius_m`, per pixel. NaN-aware: pixels with fewer than
/// two valid neighbors in the window get NaN.
pub fn slope_sd_radius(slope: &Grid, radius_m: f64) -> Result<Grid> {
    if radius_m <= 0.0 || !radius_m.is_finite() {
        return Err(Error::config("radius_m must be positive"));
    }
    let radius_px = radius_m / slope.resolution_m;
    let offsets = disk_offsets(radius_px);
    let (w, h) = (slope.width, slope.height);
    let mut out = Grid::filled(w, h, f32::NAN).with_resolution(slope.resolution_m);
    let rows: Vec<&mut [f32]> = out.rows_mut().collect();
    rows.into_par_iter().enumerate().for_each(|(r, orow)| {
        for c in 0..w {
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            let mut n = 0usize;
            for &(dy, dx) in &offsets {
                let rr = r as isize + dy;
                let cc = c as isize + dx;
                if rr < 0 || rr >= h as isize || cc < 0 || cc >= w as isize {
                    continue;
                }
                let v = slope.get(rr as usize, cc as usize) as f64;
                if v.is_finite() {
                    sum += v;
                    sumsq += v * v;
                    n += 1;
                }
            }
            if n >= 2 {
                let mean = sum / n as f64;
                let var = (sumsq / n as f64 - mean * mean).max(0.0);
                orow[c] = var.sqrt() as f32;
            }
        }
    });
    Ok(out)
}
