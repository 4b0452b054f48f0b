//! Synthetic scenes with a known ground-temperature law.
//!
//! Terrain comes from seeded power-law spectral noise plus hemispherical
//! rocks and parabolic vegetation canopies. The temperature oracle is an
//! affine function of the local feature layers plus a Gaussian blur of
//! the absorbed-radiation channel, so the spatial coupling scale of the
//! ground truth is an exact, configurable quantity the tile-size sweep
//! has to recover. Everything is bit-reproducible from (config, seed).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{assemble_stack, tgi, FeatureStack, TGI_THRESHOLD};
use crate::grid::{read_grid_file, write_grid_file, Grid};
use crate::solar::{cast_shadow, clear_sky_radiation, cloud_adjust, skyview, sun_position, SolarConfig, CLOUD_FACTOR_CAP};
use crate::terrain::{feature_height, slope_aspect};

/// Guard ring generated around every scene and trimmed before the
/// feature stack is assembled, so interior pixels see real surroundings.
pub const SCENE_MARGIN_PX: usize = 12;
/// Shadow rays give up beyond this horizontal distance.
const SHADOW_MAX_DISTANCE_M: f64 = 30.0;
/// Horizon scan radius for the skyview factor.
const SKYVIEW_RADIUS_M: f64 = 10.0;
const SKYVIEW_DIRECTIONS: usize = 16;
/// Bare-ground terrain relief (standard deviation, meters).
const TERRAIN_SD_M: f64 = 0.35;

/// The eight scalar meteorological inputs fused into the network,
/// in fixed order.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MetVector {
    /// Surface albedo, decimal fraction.
    pub albedo: f64,
    /// Shortwave radiation at the station, W m^-2.
    pub s_g: f64,
    /// Air temperature at 1.2 m, K.
    pub t_a: f64,
    /// Ground pressure, Pa.
    pub p: f64,
    /// Relative humidity, %.
    pub rh: f64,
    /// Soil temperature at 10 cm, K.
    pub soil_temp_10cm: f64,
    /// Soil moisture at 10 cm, m^3 m^-3.
    pub soil_moist_10cm: f64,
    /// Initial ground temperature, K.
    pub t_g_init: f64,
}

impl MetVector {
    pub const NAMES: [&'static str; 8] = [
        "albedo",
        "s_g",
        "t_a",
        "p",
        "rh",
        "soil_temp_10cm",
        "soil_moist_10cm",
        "t_g_init",
    ];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.albedo,
            self.s_g,
            self.t_a,
            self.p,
            self.rh,
            self.soil_temp_10cm,
            self.soil_moist_10cm,
            self.t_g_init,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        MetVector {
            albedo: a[0],
            s_g: a[1],
            t_a: a[2],
            p: a[3],
            rh: a[4],
            soil_temp_10cm: a[5],
            soil_moist_10cm: a[6],
            t_g_init: a[7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.albedo) {
            return Err(Error::config("albedo must be in [0, 1]"));
        }
        if !(0.0..=100.0).contains(&self.rh) {
            return Err(Error::config("relative humidity must be in [0, 100]"));
        }
        Ok(())
    }
}

impl Default for MetVector {
    fn default() -> Self {
        // Desert-like midday baseline.
        MetVector {
            albedo: 0.30,
            s_g: 850.0,
            t_a: 303.0,
            p: 101_300.0,
            rh: 35.0,
            soil_temp_10cm: 300.0,
            soil_moist_10cm: 0.08,
            t_g_init: 305.0,
        }
    }
}

/// Configuration for one synthetic world (one "field day").
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Scene edge length in pixels (square), after trimming.
    pub size: usize,
    pub resolution_m: f64,
    /// Spectral exponent of the bare-ground noise; larger is smoother.
    pub terrain_roughness: f64,
    /// Rocks per square meter.
    pub rock_density: f64,
    /// Rock heights drawn uniformly from this range, meters.
    pub rock_height_range: (f64, f64),
    /// Vegetation canopies per square meter.
    pub vegetation_density: f64,
    pub solar: SolarConfig,
    /// Baseline meteorology; per-flight values are derived from it.
    pub met: MetVector,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            size: 512,
            resolution_m: 0.15,
            terrain_roughness: 2.6,
            rock_density: 0.04,
            rock_height_range: (0.25, 1.2),
            vegetation_density: 0.01,
            solar: SolarConfig::default(),
            met: MetVector::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 128 {
            return Err(Error::config("world size must be at least 128 px"));
        }
        if self.resolution_m <= 0.0 {
            return Err(Error::config("resolution_m must be positive"));
        }
        if self.rock_density < 0.0 || self.vegetation_density < 0.0 {
            return Err(Error::config("densities must be nonnegative"));
        }
        if self.rock_height_range.0 > self.rock_height_range.1 || self.rock_height_range.0 < 0.0 {
            return Err(Error::config("rock_height_range must be 0 <= lo <= hi"));
        }
        self.solar.validate()?;
        self.met.validate()
    }
}

/// Coefficients of the synthetic ground-temperature law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Gaussian blur SD applied to absorbed radiation, meters. Zero
    /// makes the oracle purely local.
    pub coupling_radius_m: f64,
    /// Base temperature, degrees C.
    pub base_c: f64,
    /// Gain on blurred absorbed radiation, degrees C per W m^-2.
    pub radiation_gain: f64,
    /// Gain on sky occlusion (1 - skyview), degrees C.
    pub skyview_gain: f64,
    /// Offset added to shaded pixels, degrees C.
    pub shade_offset: f64,
    /// Offset added to vegetated pixels (tgi above threshold), degrees C.
    pub vegetation_offset: f64,
    /// Per-pixel Gaussian noise SD, degrees C.
    pub noise_sd: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            coupling_radius_m: 1.05, // 7 px at 15 cm
            base_c: 28.0,
            radiation_gain: 0.012,
            skyview_gain: 4.0,
            shade_offset: -1.5,
            vegetation_offset: -3.0,
            noise_sd: 0.3,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coupling_radius_m < 0.0 {
            return Err(Error::config("coupling_radius_m must be nonnegative"));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::config("noise_sd must be nonnegative"));
        }
        Ok(())
    }
}

/// One synthetic flight: co-registered rasters, meteorology, and the
/// oracle thermal map.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub flight_id: String,
    pub solar_time: f64,
    pub dtm: Grid,
    pub dsm: Grid,
    pub rgb: [Grid; 3],
    pub stack: FeatureStack,
    pub thermal: Grid,
    pub met: MetVector,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derive a sub-seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Power-law ("1/f^beta") noise field with zero mean and unit SD.
fn spectral_noise(size: usize, roughness: f64, seed: u64) -> Vec<f64> {
    let n = size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    let mut field: Vec<Complex<f64>> = (0..n * n)
        .map(|_| Complex::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();

    // Scale each frequency bin by |f|^(-beta/2); kill the DC term.
    for ky in 0..n {
        let fy = if ky <= n / 2 { ky as f64 } else { (n - ky) as f64 } / n as f64;
        for kx in 0..n {
            let fx = if kx <= n / 2 { kx as f64 } else { (n - kx) as f64 } / n as f64;
            let f = (fx * fx + fy * fy).sqrt();
            let amp = if f > 0.0 { f.powf(-roughness / 2.0) } else { 0.0 };
            field[ky * n + kx] *= amp;
        }
    }

    // Inverse 2D FFT: rows, transpose, rows, transpose.
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    for row in field.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut transposed = vec![Complex::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            transposed[c * n + r] = field[r * n + c];
        }
    }
    for row in transposed.chunks_exact_mut(n) {
        fft.process(row);
    }

    let mut real: Vec<f64> = (0..n * n).map(|i| transposed[(i % n) * n + i / n].re).collect();
    let mean = real.iter().sum::<f64>() / real.len() as f64;
    let var = real.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / real.len() as f64;
    let sd = var.sqrt().max(1e-30);
    for v in &mut real {
        *v = (*v - mean) / sd;
    }
    real
}

/// Generate bare ground, surface objects, and RGB reflectance for one
/// world. Deterministic in `cfg.seed`.
pub fn gen_terrain(cfg: &WorldConfig) -> Result<(Grid, Grid, [Grid; 3])> {
    cfg.validate()?;
    let n = cfg.size;
    let res = cfg.resolution_m;

    let noise = spectral_noise(n, cfg.terrain_roughness, mix_seed(cfg.seed, 1));
    let mut dtm = Grid::zeros(n, n).with_resolution(res).with_name("dtm");
    for (v, z) in dtm.values_mut().iter_mut().zip(&noise) {
        *v = (z * TERRAIN_SD_M) as f32;
    }

    // Objects on top of the ground: overlaps take the taller surface.
    let mut extra = vec![0.0f32; n * n];
    let mut veg_mask = vec![false; n * n];
    let area_m2 = (n as f64 * res) * (n as f64 * res);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));

    let n_rocks = if cfg.rock_density > 0.0 {
        ((cfg.rock_density * area_m2).round() as usize).max(1)
    } else {
        0
    };
    for _ in 0..n_rocks {
        let r0 = rng.random_range(0..n);
        let c0 = rng.random_range(0..n);
        let (lo, hi) = cfg.rock_height_range;
        let h = if hi > lo { rng.random_range(lo..hi) } else { lo };
        if h <= 0.0 {
            continue;
        }
        let r_px = (h / res).ceil() as isize;
        for dy in -r_px..=r_px {
            for dx in -r_px..=r_px {
                let rr = r0 as isize + dy;
                let cc = c0 as isize + dx;
                if rr < 0 || rr >= n as isize || cc < 0 || cc >= n as isize {
                    continue;
                }
                let d_m = ((dy * dy + dx * dx) as f64).sqrt() * res;
                if d_m <= h {
                    let z = (h * h - d_m * d_m).sqrt() as f32;
                    let idx = rr as usize * n + cc as usize;
                    if z > extra[idx] {
                        extra[idx] = z;
                        veg_mask[idx] = false; // rock caps a canopy
                    }
                }
            }
        }
    }

    let n_veg = if cfg.vegetation_density > 0.0 {
        ((cfg.vegetation_density * area_m2).round() as usize).max(1)
    } else {
        0
    };
    for _ in 0..n_veg {
        let r0 = rng.random_range(0..n);
        let c0 = rng.random_range(0..n);
        let h = rng.random_range(0.25..0.7f64);
        let radius = rng.random_range(0.3..0.8f64);
        let r_px = (radius / res).ceil() as isize;
        for dy in -r_px..=r_px {
            for dx in -r_px..=r_px {
                let rr = r0 as isize + dy;
                let cc = c0 as isize + dx;
                if rr < 0 || rr >= n as isize || cc < 0 || cc >= n as isize {
                    continue;
                }
                let d_m = ((dy * dy + dx * dx) as f64).sqrt() * res;
                if d_m <= radius {
                    let z = (h * (1.0 - (d_m / radius) * (d_m / radius))) as f32;
                    let idx = rr as usize * n + cc as usize;
                    if z > extra[idx] {
                        extra[idx] = z;
                        veg_mask[idx] = true;
                    }
                }
            }
        }
    }

    let mut dsm = dtm.clone().with_name("dsm");
    for (v, &e) in dsm.values_mut().iter_mut().zip(&extra) {
        if e != 0.0 {
            *v += e;
        }
    }

    // RGB reflectance: tan ground, gray rocks, green vegetation, all
    // modulated by a fixed-northwest hillshade of the surface.
    const TAN: [f64; 3] = [0.55, 0.45, 0.35];
    const ROCK: [f64; 3] = [0.50, 0.50, 0.50];
    const GREEN: [f64; 3] = [0.20, 0.50, 0.15];
    let az = 315f64.to_radians();
    let el = 45f64.to_radians();
    let light = [
        el.cos() * az.sin(),  // east
        el.cos() * az.cos(),  // north
        el.sin(),             // up
    ];
    let mut rgb = [
        Grid::zeros(n, n).with_resolution(res).with_name("rgb_red"),
        Grid::zeros(n, n).with_resolution(res).with_name("rgb_green"),
        Grid::zeros(n, n).with_resolution(res).with_name("rgb_blue"),
    ];
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
    for r in 0..n {
        for c in 0..n {
            let idx = r * n + c;
            // Central-difference surface normal (clamped at edges).
            let rp = (r + 1).min(n - 1);
            let rm = r.saturating_sub(1);
            let cp = (c + 1).min(n - 1);
            let cm = c.saturating_sub(1);
            let dz_de = (dsm.get(r, cp) as f64 - dsm.get(r, cm) as f64) / ((cp - cm) as f64 * res);
            let dz_dn = (dsm.get(rm, c) as f64 - dsm.get(rp, c) as f64) / ((rp - rm) as f64 * res);
            let norm = (dz_de * dz_de + dz_dn * dz_dn + 1.0).sqrt();
            let shade_dot = ((-dz_de) * light[0] + (-dz_dn) * light[1] + light[2]) / norm;
            let jitter: f64 = jitter_rng.random_range(-0.03..0.03);
            let brightness = (0.55 + 0.45 * shade_dot.max(0.0) + jitter).clamp(0.3, 1.1);
            let base = if veg_mask[idx] {
                GREEN
            } else if extra[idx] > 0.0 {
                ROCK
            } else {
                TAN
            };
            // Vegetation stays bright enough to clear the TGI threshold.
            let b = if veg_mask[idx] { brightness.max(0.5) } else { brightness };
            for (ch, grid) in rgb.iter_mut().enumerate() {
                grid.set(r, c, (base[ch] * b) as f32);
            }
        }
    }

    Ok((dtm, dsm, rgb))
}

/// Separable Gaussian blur with reflective borders, truncated at 4 SD.
/// `sd_px <= 0` returns the input unchanged.
pub fn gaussian_blur(grid: &Grid, sd_px: f64) -> Grid {
    if sd_px <= 0.0 {
        return grid.clone();
    }
    let radius = (4.0 * sd_px).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-0.5 * (i as f64 / sd_px) * (i as f64 / sd_px)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }

    let (w, h) = (grid.width, grid.height);
    let reflect = |i: isize, len: isize| -> usize {
        let mut i = i;
        while i < 0 || i >= len {
            if i < 0 {
                i = -i - 1;
            }
            if i >= len {
                i = 2 * len - i - 1;
            }
        }
        i as usize
    };

    // Horizontal pass.
    let mut tmp = vec![0.0f64; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + ki as isize - radius, w as isize);
                acc += k * grid.get(r, cc) as f64;
            }
            tmp[r * w + c] = acc;
        }
    }
    // Vertical pass.
    let mut out = grid.clone();
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + ki as isize - radius, h as isize);
                acc += k * tmp[rr * w + c];
            }
            out.set(r, c, acc as f32);
        }
    }
    out
}

/// Ground-truth temperature: an affine function of the feature layers
/// with the absorbed-radiation term blurred at the coupling radius,
/// plus seeded Gaussian noise.
pub fn oracle_temperature(
    stack: &FeatureStack,
    oc: &OracleConfig,
    met: &MetVector,
    seed: u64,
) -> Result<Grid> {
    oc.validate()?;
    let (w, h) = (stack.width(), stack.height());
    let res = stack.resolution_m();

    let mut absorbed = stack.radiation().clone();
    let gain = 1.0 - met.albedo;
    for v in absorbed.values_mut() {
        *v = (*v as f64 * gain) as f32;
    }
    let blurred = gaussian_blur(&absorbed, oc.coupling_radius_m / res);

    let mut out = Grid::zeros(w, h).with_resolution(res).with_name("thermal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if oc.noise_sd > 0.0 {
        Some(Normal::new(0.0f64, oc.noise_sd).unwrap())
    } else {
        None
    };
    for i in 0..w * h {
        let b = blurred.values()[i] as f64;
        let sv = stack.skyview().values()[i] as f64;
        let sh = stack.shade().values()[i] as f64;
        let veg = if (stack.tgi().values()[i] as f64) > TGI_THRESHOLD { 1.0 } else { 0.0 };
        let mut t = oc.base_c
            + oc.radiation_gain * b
            + oc.skyview_gain * (1.0 - sv)
            + oc.shade_offset * sh
            + oc.vegetation_offset * veg;
        if let Some(n) = &noise {
            t += n.sample(&mut rng);
        }
        out.values_mut()[i] = t as f32;
    }
    Ok(out)
}

/// Derive per-flight meteorology from the world baseline, the solar
/// time, and the flight's cloudiness draw.
fn met_for_flight(base: &MetVector, solar_time: f64, cloud_factor: f64, max_flat_radiation: f64) -> MetVector {
    // Smooth diurnal shape peaking at solar noon.
    let phase = ((solar_time - 6.0) / 12.0 * std::f64::consts::PI).sin().max(0.0);
    MetVector {
        albedo: base.albedo,
        s_g: cloud_factor * max_flat_radiation,
        t_a: base.t_a - 6.0 + 9.0 * phase,
        p: base.p,
        rh: (base.rh + 12.0 - 20.0 * phase).clamp(3.0, 100.0),
        soil_temp_10cm: base.soil_temp_10cm - 3.0 + 5.0 * phase,
        soil_moist_10cm: base.soil_moist_10cm,
        t_g_init: base.t_g_init - 8.0 + 12.0 * phase,
    }
}

/// Run the full per-flight pipeline: terrain, terrain analysis, solar
/// physics, feature stack, and the thermal oracle. The scene is
/// generated with a guard margin and trimmed to `world.size`.
pub fn gen_flight(world: &WorldConfig, oracle: &OracleConfig, solar_time: f64) -> Result<SceneBundle> {
    world.validate()?;
    oracle.validate()?;
    let padded = WorldConfig {
        size: world.size + 2 * SCENE_MARGIN_PX,
        ..world.clone()
    };
    let (dtm_p, dsm_p, rgb_p) = gen_terrain(&padded)?;

    let solar = world.solar.at_time(solar_time);
    solar.validate()?;
    let sun = sun_position(&solar);
    let terrain = slope_aspect(&dsm_p)?;
    let shade_p = cast_shadow(&dsm_p, sun, SHADOW_MAX_DISTANCE_M)?;
    let svf_p = skyview(&dsm_p, SKYVIEW_DIRECTIONS, SKYVIEW_RADIUS_M)?;
    let rad_clear = clear_sky_radiation(&terrain, &shade_p, &svf_p, &solar)?;

    // Cloudiness for this flight, seeded by (world seed, time).
    let time_salt = (solar_time * 3600.0).round() as u64;
    let flight_seed = mix_seed(world.seed, time_salt);
    let mut cloud_rng = ChaCha8Rng::seed_from_u64(mix_seed(flight_seed, 11));
    let cloud_factor = cloud_rng.random_range(0.80..1.00f64);

    // Station reading implied by the cloudiness; the adjustment then
    // reproduces exactly that factor.
    let mut max_flat = 0.0f64;
    for (&r, &s) in rad_clear.values().iter().zip(terrain.slope.values()) {
        if (s as f64) < crate::solar::FLAT_SLOPE_RAD && r.is_finite() && r as f64 > max_flat {
            max_flat = r as f64;
        }
    }
    let met = met_for_flight(&world.met, solar_time, cloud_factor, max_flat);
    let rad_p = if max_flat > 0.0 {
        cloud_adjust(&rad_clear, &terrain.slope, met.s_g, Some(CLOUD_FACTOR_CAP))?
    } else {
        rad_clear // sun below horizon: keep the all-zero map
    };

    let height_p = feature_height(&dsm_p, &dtm_p)?;
    let tgi_p = tgi(&rgb_p[0], &rgb_p[1], &rgb_p[2])?;

    let m = SCENE_MARGIN_PX;
    let crop = |g: &Grid| g.crop_border(m);
    let dtm = crop(&dtm_p)?;
    let dsm = crop(&dsm_p)?;
    let rgb = [crop(&rgb_p[0])?, crop(&rgb_p[1])?, crop(&rgb_p[2])?];
    let stack = assemble_stack(
        crop(&rad_p)?.with_name("radiation"),
        crop(&shade_p)?.with_name("shade"),
        crop(&svf_p)?.with_name("skyview"),
        crop(&tgi_p)?.with_name("tgi"),
        crop(&height_p)?.with_name("height"),
    )?;

    let thermal = oracle_temperature(&stack, oracle, &met, mix_seed(flight_seed, 13))?;
    let hhmm = format!(
        "{:02}{:02}",
        solar_time.floor() as u32,
        ((solar_time - solar_time.floor()) * 60.0).round() as u32
    );
    Ok(SceneBundle {
        flight_id: format!("f{:016x}-{hhmm}", world.seed),
        solar_time,
        dtm,
        dsm,
        rgb,
        stack,
        thermal,
        met,
    })
}

/// JSON sidecar stored with every scene directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub flight_id: String,
    pub solar_time: f64,
    pub met: MetVector,
    pub world_seed: u64,
    pub resolution_m: f64,
    pub size: usize,
}

const SCENE_GRIDS: [&str; 11] = [
    "dtm", "dsm", "rgb_red", "rgb_green", "rgb_blue", "radiation", "shade", "skyview", "tgi",
    "height", "thermal",
];

/// Persist a scene as a directory of MCG1 grids plus `manifest.json`.
pub fn save_scene(scene: &SceneBundle, dir: impl AsRef<Path>, world_seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let grids: [&Grid; 11] = [
        &scene.dtm,
        &scene.dsm,
        &scene.rgb[0],
        &scene.rgb[1],
        &scene.rgb[2],
        scene.stack.radiation(),
        scene.stack.shade(),
        scene.stack.skyview(),
        scene.stack.tgi(),
        scene.stack.object_height(),
        &scene.thermal,
    ];
    for (name, grid) in SCENE_GRIDS.iter().zip(grids) {
        let mut named = grid.clone();
        named.name = name.to_string();
        write_grid_file(&named, dir.join(format!("{name}.mcg1")))?;
    }
    let manifest = SceneManifest {
        flight_id: scene.flight_id.clone(),
        solar_time: scene.solar_time,
        met: scene.met,
        world_seed,
        resolution_m: scene.dtm.resolution_m,
        size: scene.dtm.width,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Load a scene directory written by [`save_scene`].
pub fn load_scene(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let manifest: SceneManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::format(format!("manifest decode: {e}")))?;
    let load = |name: &str| read_grid_file(dir.join(format!("{name}.mcg1")));
    let stack = assemble_stack(
        load("radiation")?,
        load("shade")?,
        load("skyview")?,
        load("tgi")?,
        load("height")?,
    )?;
    Ok(SceneBundle {
        flight_id: manifest.flight_id,
        solar_time: manifest.solar_time,
        dtm: load("dtm")?,
        dsm: load("dsm")?,
        rgb: [load("rgb_red")?, load("rgb_green")?, load("rgb_blue")?],
        stack,
        thermal: load("thermal")?,
        met: manifest.met,
    })
}
