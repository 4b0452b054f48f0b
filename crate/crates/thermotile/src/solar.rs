//! Solar geometry and the spatially varying radiation physics: sun
//! position, cast shadows, skyview factor, clear-sky irradiance on
//! tilted surfaces, and cloud-cover scaling.
//!
//! Sun position uses the Cooper declination plus hour angle. Shadows
//! ray-march the DSM toward the sun (step 0.5 px, 1 mm bias). Skyview
//! scans horizon angles in `n_azimuth` directions and averages
//! `1 - sin(horizon)`. All azimuths are radians from north, clockwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::terrain::TerrainDerivatives;

/// Ray-march step along shadow and horizon scans, in pixels.
const RAY_STEP_PX: f64 = 0.5;
/// Height bias when testing occlusion, in meters.
const SHADOW_BIAS_M: f64 = 0.001;
/// Default cap on the cloud scaling factor.
pub const CLOUD_FACTOR_CAP: f64 = 1.5;
/// Near-horizontal threshold for the cloud reference pixels: 0.1 degrees.
pub const FLAT_SLOPE_RAD: f64 = 0.1 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy)]
pub struct SunPosition {
    /// Radians above the horizon, in [-pi/2, pi/2].
    pub elevation: f64,
    /// Radians from north, clockwise, in [0, 2pi).
    pub azimuth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolarConfig {
    pub latitude_deg: f64,
    pub day_of_year: u32,
    /// Decimal hours of solar time; 12.0 is solar noon.
    pub solar_time: f64,
    #[serde(default = "default_solar_constant")]
    pub solar_constant: f64,
    #[serde(default = "default_transmittance")]
    pub atmospheric_transmittance: f64,
    #[serde(default = "default_diffuse_fraction")]
    pub diffuse_fraction: f64,
}

fn default_solar_constant() -> f64 {
    1367.0
}
fn default_transmittance() -> f64 {
    0.70
}
fn default_diffuse_fraction() -> f64 {
    0.15
}

impl Default for SolarConfig {
    fn default() -> Self {
        SolarConfig {
            latitude_deg: 31.4,
            day_of_year: 172,
            solar_time: 12.0,
            solar_constant: default_solar_constant(),
            atmospheric_transmittance: default_transmittance(),
            diffuse_fraction: default_diffuse_fraction(),
        }
    }
}

impl SolarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=366).contains(&self.day_of_year) {
            return Err(Error::config("day_of_year must be in 1..=366"));
        }
        if !(0.0..24.0).contains(&self.solar_time) {
            return Err(Error::config("solar_time must be in [0, 24)"));
        }
        if !(self.atmospheric_transmittance > 0.0 && self.atmospheric_transmittance <= 1.0) {
            return Err(Error::config("transmittance must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.diffuse_fraction) {
            return Err(Error::config("diffuse_fraction must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn at_time(&self, solar_time: f64) -> SolarConfig {
        SolarConfig { solar_time, ..self.clone() }
    }
}

/// Cooper declination for a day of year, radians.
pub fn declination(day_of_year: u32) -> f64 {
    let deg = 23.45 * (360.0 * (284 + day_of_year) as f64 / 365.0).to_radians().sin();
    deg.to_radians()
}

/// Sun elevation and azimuth from latitude, day of year, and solar time.
pub fn sun_position(cfg: &SolarConfig) -> SunPosition {
    let phi = cfg.latitude_deg.to_radians();
    let delta = declination(cfg.day_of_year);
    let hour_angle = (15.0 * (cfg.solar_time - 12.0)).to_radians();
    let sin_elev = phi.sin() * delta.sin() + phi.cos() * delta.cos() * hour_angle.cos();
    let elevation = sin_elev.clamp(-1.0, 1.0).asin();

    let cos_elev = elevation.cos();
    let azimuth = if cos_elev < 1e-12 {
        0.0 // zenith: azimuth undefined
    } else {
        let cos_az = ((delta.sin() - sin_elev * phi.sin()) / (cos_elev * phi.cos())).clamp(-1.0, 1.0);
        let az = cos_az.acos();
        // Morning sun east of north, afternoon west.
        if hour_angle > 0.0 {
            std::f64::consts::TAU - az
        } else {
            az
        }
    };
    SunPosition {
        elevation,
        azimuth: azimuth.rem_euclid(std::f64::consts::TAU),
    }
}

/// Bilinear DSM sample at fractional (row, col); None outside the grid.
#[inline]
fn sample_bilinear(dsm: &Grid, row: f64, col: f64) -> Option<f64> {
    if row < 0.0 || col < 0.0 {
        return None;
    }
    let r0 = row.floor() as usize;
    let c0 = col.floor() as usize;
    if r0 + 1 >= dsm.height || c0 + 1 >= dsm.width {
        // Clamp exact bottom/right edge hits; reject anything beyond.
        if row <= (dsm.height - 1) as f64 && col <= (dsm.width - 1) as f64 {
            let r = row.round() as usize;
            let c = col.round() as usize;
            return Some(dsm.get(r.min(dsm.height - 1), c.min(dsm.width - 1)) as f64);
        }
        return None;
    }
    let fr = row - r0 as f64;
    let fc = col - c0 as f64;
    let v00 = dsm.get(r0, c0) as f64;
    let v01 = dsm.get(r0, c0 + 1) as f64;
    let v10 = dsm.get(r0 + 1, c0) as f64;
    let v11 = dsm.get(r0 + 1, c0 + 1) as f64;
    Some(v00 * (1.0 - fr) * (1.0 - fc) + v01 * (1.0 - fr) * fc + v10 * fr * (1.0 - fc) + v11 * fr * fc)
}

/// Binary shade map: 1 where some DSM sample toward the sun blocks the
/// direct beam within `max_distance_m`, 0 otherwise. Sun at or below the
/// horizon shades everything.
pub fn cast_shadow(dsm: &Grid, sun: SunPosition, max_distance_m: f64) -> Result<Grid> {
    if max_distance_m <= 0.0 {
        return Err(Error::config("max_distance_m must be positive"));
    }
    let (w, h) = (dsm.width, dsm.height);
    let mut out = Grid::zeros(w, h).with_resolution(dsm.resolution_m);
    if sun.elevation <= 0.0 {
        out.values_mut().fill(1.0);
        return Ok(out);
    }
    if sun.elevation >= std::f64::consts::FRAC_PI_2 - 1e-12 {
        return Ok(out); // vertical rays cannot be blocked
    }
    let res = dsm.resolution_m;
    let tan_elev = sun.elevation.tan();
    // Unit step toward the sun in (row, col) screen space; north is -row.
    let dcol = sun.azimuth.sin();
    let drow = -sun.azimuth.cos();
    let max_px = max_distance_m / res;

    let rows: Vec<&mut [f32]> = out.rows_mut().collect();
    rows.into_par_iter().enumerate().for_each(|(r, orow)| {
        for c in 0..w {
            let z0 = dsm.get(r, c) as f64;
            if !z0.is_finite() {
                orow[c] = f32::NAN;
                continue;
            }
            let mut t = RAY_STEP_PX;
            while t <= max_px {
                let rr = r as f64 + drow * t;
                let cc = c as f64 + dcol * t;
                let Some(z) = sample_bilinear(dsm, rr, cc) else {
                    break; // ray left the map: assume open ground beyond
                };
                if z > z0 + t * res * tan_elev + SHADOW_BIAS_M {
                    orow[c] = 1.0;
                    break;
                }
                t += RAY_STEP_PX;
            }
        }
    });
    Ok(out)
}

/// Skyview factor: per pixel, the mean over `n_azimuth` directions of
/// `1 - sin(horizon angle)`, horizon angles floored at zero. 1 on open
/// flats, toward 0 in enclosed pits.
pub fn skyview(dsm: &Grid, n_azimuth: usize, max_radius_m: f64) -> Result<Grid> {
    if n_azimuth < 4 {
        return Err(Error::config("skyview needs at least 4 azimuth directions"));
    }
    if max_radius_m <= 0.0 {
        return Err(Error::config("max_radius_m must be positive"));
    }
    let (w, h) = (dsm.width, dsm.height);
    let res = dsm.resolution_m;
    let max_px = max_radius_m / res;
    let dirs: Vec<(f64, f64)> = (0..n_azimuth)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / n_azimuth as f64;
            (-az.cos(), az.sin()) // (drow, dcol), direction 0 = north
        })
        .collect();

    let mut out = Grid::filled(w, h, f32::NAN).with_resolution(res);
    let rows: Vec<&mut [f32]> = out.rows_mut().collect();
    rows.into_par_iter().enumerate().for_each(|(r, orow)| {
        for c in 0..w {
            let z0 = dsm.get(r, c) as f64;
            if !z0.is_finite() {
                continue;
            }
            let mut sum = 0.0f64;
            for &(drow, dcol) in &dirs {
                let mut max_tan = 0.0f64;
                let mut t = 1.0f64;
                while t <= max_px {
                    let Some(z) = sample_bilinear(dsm, r as f64 + drow * t, c as f64 + dcol * t)
                    else {
                        break;
                    };
                    let tan_angle = (z - z0) / (t * res);
                    if tan_angle > max_tan {
                        max_tan = tan_angle;
                    }
                    t += 1.0;
                }
                let gamma = max_tan.atan(); // >= 0 by the floor above
                sum += 1.0 - gamma.sin();
            }
            orow[c] = (sum / n_azimuth as f64) as f32;
        }
    });
    Ok(out)
}

/// Clear-sky shortwave radiation on tilted, possibly shaded terrain.
///
/// Direct beam `S0 * tau^(1/max(sin e, 0.01))` masked by shade and
/// projected by the incidence angle, plus isotropic diffuse scaled by
/// the skyview factor. Zero at and below the horizon, floored at zero.
pub fn clear_sky_radiation(
    terrain: &TerrainDerivatives,
    shade: &Grid,
    svf: &Grid,
    cfg: &SolarConfig,
) -> Result<Grid> {
    if !terrain.slope.same_shape(shade) || !terrain.slope.same_shape(svf) {
        return Err(Error::dimension("radiation inputs are not co-registered"));
    }
    let (w, h) = (shade.width, shade.height);
    let mut out = Grid::zeros(w, h).with_resolution(shade.resolution_m);
    let sun = sun_position(cfg);
    if sun.elevation <= 0.0 {
        return Ok(out);
    }
    let sin_e = sun.elevation.sin();
    let cos_e = sun.elevation.cos();
    let beam = cfg.solar_constant
        * cfg
            .atmospheric_transmittance
            .powf(1.0 / sin_e.max(0.01));
    let diffuse_horizontal = cfg.diffuse_fraction * cfg.solar_constant * sin_e;

    let rows: Vec<&mut [f32]> = out.rows_mut().collect();
    rows.into_par_iter().enumerate().for_each(|(r, orow)| {
        for c in 0..w {
            let slope = terrain.slope.get(r, c) as f64;
            let aspect = terrain.aspect.get(r, c) as f64;
            let sh = shade.get(r, c) as f64;
            let sv = svf.get(r, c) as f64;
            if !slope.is_finite() || !sh.is_finite() || !sv.is_finite() {
                orow[c] = f32::NAN;
                continue;
            }
            // Flat pixels have undefined aspect; incidence reduces to sin e.
            let cos_inc = if aspect.is_nan() {
                sin_e
            } else {
                (slope.cos() * sin_e + slope.sin() * cos_e * (sun.azimuth - aspect).cos()).max(0.0)
            };
            let value = (1.0 - sh) * beam * cos_inc + diffuse_horizontal * sv;
            orow[c] = value.max(0.0) as f32;
        }
    });
    Ok(out)
}

/// Scale a modeled radiation map so near-horizontal pixels match the
/// measured station value. The factor is capped (default 1.5) unless
/// `cap` is None.
pub fn cloud_adjust(radiation: &Grid, slope: &Grid, measured_sg: f64, cap: Option<f64>) -> Result<Grid> {
    if measured_sg < 0.0 || !measured_sg.is_finite() {
        return Err(Error::config("measured_sg must be nonnegative"));
    }
    if !radiation.same_shape(slope) {
        return Err(Error::dimension("cloud_adjust inputs are not co-registered"));
    }
    let mut max_flat = f64::NEG_INFINITY;
    let mut any_flat = false;
    for (&r, &s) in radiation.values().iter().zip(slope.values()) {
        if (s as f64) < FLAT_SLOPE_RAD && r.is_finite() {
            any_flat = true;
            if r as f64 > max_flat {
                max_flat = r as f64;
            }
        }
    }
    if !any_flat {
        return Err(Error::compute("no near-horizontal pixel for the cloud reference"));
    }
    let factor = if max_flat <= 0.0 {
        if measured_sg > 0.0 {
            return Err(Error::compute(
                "measured radiation positive but modeled maximum is zero",
            ));
        }
        0.0
    } else {
        let f = measured_sg / max_flat;
        match cap {
            Some(c) => f.min(c),
            None => f,
        }
    };
    let mut out = radiation.clone();
    for v in out.values_mut() {
        *v = (*v as f64 * factor) as f32;
    }
    Ok(out)
}
