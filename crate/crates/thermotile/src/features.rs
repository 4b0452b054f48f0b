//! The five-channel input representation and the standardization
//! applied before training.
//!
//! Channel order is fixed and versioned: radiation, shade, skyview,
//! tgi, height. The standardizer is fit on training scenes only and
//! persisted as JSON so test-time application provably reuses the
//! stored statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridStack};
use crate::synth::MetVector;

/// Fixed channel names, in stack order.
pub const CHANNEL_NAMES: [&str; 5] = ["radiation", "shade", "skyview", "tgi", "height"];
/// Vegetation threshold on the greenness index.
pub const TGI_THRESHOLD: f64 = 0.04;

/// Ordered five-channel raster stack over one scene.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    stack: GridStack,
}

impl FeatureStack {
    pub fn width(&self) -> usize {
        self.stack.width()
    }
    pub fn height(&self) -> usize {
        self.stack.height()
    }
    pub fn resolution_m(&self) -> f64 {
        self.stack.resolution_m()
    }
    pub fn channel(&self, index: usize) -> &Grid {
        self.stack.channel(index)
    }
    pub fn radiation(&self) -> &Grid {
        self.stack.channel(0)
    }
    pub fn shade(&self) -> &Grid {
        self.stack.channel(1)
    }
    pub fn skyview(&self) -> &Grid {
        self.stack.channel(2)
    }
    pub fn tgi(&self) -> &Grid {
        self.stack.channel(3)
    }
    /// The object-height channel (DSM minus DTM).
    pub fn object_height(&self) -> &Grid {
        self.stack.channel(4)
    }
    pub fn as_grid_stack(&self) -> &GridStack {
        &self.stack
    }
}

/// Triangular greenness index on [0,1] reflectance channels:
/// `G - 0.39 R - 0.61 B`, computed as `0.39 (G - R) + 0.61 (G - B)` so
/// a constant shift of all three channels cancels exactly.
pub fn tgi(red: &Grid, green: &Grid, blue: &Grid) -> Result<Grid> {
    if !red.same_shape(green) || !red.same_shape(blue) {
        return Err(Error::dimension("tgi: rgb channels are not co-registered"));
    }
    let mut out = Grid::zeros(red.width, red.height).with_resolution(red.resolution_m);
    for (((o, &r), &g), &b) in out
        .values_mut()
        .iter_mut()
        .zip(red.values())
        .zip(green.values())
        .zip(blue.values())
    {
        let g = g as f64;
        *o = (0.39 * (g - r as f64) + 0.61 * (g - b as f64)) as f32;
    }
    Ok(out)
}

/// Binary vegetation mask: 1 where tgi is strictly above the threshold.
pub fn vegetation_mask(tgi: &Grid, threshold: f64) -> Grid {
    let mut out = Grid::zeros(tgi.width, tgi.height).with_resolution(tgi.resolution_m);
    for (o, &v) in out.values_mut().iter_mut().zip(tgi.values()) {
        *o = if (v as f64) > threshold { 1.0 } else { 0.0 };
    }
    out
}

/// Assemble the five layers in fixed order into a stack.
pub fn assemble_stack(
    radiation: Grid,
    shade: Grid,
    skyview: Grid,
    tgi: Grid,
    height: Grid,
) -> Result<FeatureStack> {
    let stack = GridStack::new(vec![
        (CHANNEL_NAMES[0].into(), radiation),
        (CHANNEL_NAMES[1].into(), shade),
        (CHANNEL_NAMES[2].into(), skyview),
        (CHANNEL_NAMES[3].into(), tgi),
        (CHANNEL_NAMES[4].into(), height),
    ])?;
    Ok(FeatureStack { stack })
}

/// Per-channel and per-met-variable standardization statistics, plus the
/// training label mean. Fit on training scenes only.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Standardizer {
    pub channel_names: Vec<String>,
    pub channel_mean: Vec<f64>,
    pub channel_sd: Vec<f64>,
    pub met_names: Vec<String>,
    pub met_mean: Vec<f64>,
    pub met_sd: Vec<f64>,
    /// Met variables whose SD collapsed to zero and were pinned to 1.
    pub met_degenerate: Vec<usize>,
    /// Mean ground temperature over valid (non-vegetation) training pixels.
    pub label_mean: f64,
}

impl Standardizer {
    /// Pooled channel statistics over every training pixel, met statistics
    /// over the training scenes, label mean over non-vegetation thermal
    /// pixels. Sequential reduction: summation order is deterministic.
    pub fn fit(scenes: &[(&FeatureStack, &MetVector, &Grid)]) -> Result<Standardizer> {
        if scenes.is_empty() {
            return Err(Error::config("cannot fit a standardizer on zero scenes"));
        }
        let n_channels = CHANNEL_NAMES.len();
        let mut sums = vec![0.0f64; n_channels];
        let mut sumsqs = vec![0.0f64; n_channels];
        let mut counts = vec![0usize; n_channels];
        for (stack, _, _) in scenes {
            for ch in 0..n_channels {
                for &v in stack.channel(ch).values() {
                    if v.is_finite() {
                        let v = v as f64;
                        sums[ch] += v;
                        sumsqs[ch] += v * v;
                        counts[ch] += 1;
                    }
                }
            }
        }
        let mut channel_mean = Vec::with_capacity(n_channels);
        let mut channel_sd = Vec::with_capacity(n_channels);
        for ch in 0..n_channels {
            if counts[ch] == 0 {
                return Err(Error::compute(format!(
                    "channel {} has no valid pixels",
                    CHANNEL_NAMES[ch]
                )));
            }
            let mean = sums[ch] / counts[ch] as f64;
            let var = (sumsqs[ch] / counts[ch] as f64 - mean * mean).max(0.0);
            let sd = var.sqrt();
            if sd <= 0.0 {
                return Err(Error::compute(format!(
                    "channel {} is degenerate (sd = 0)",
                    CHANNEL_NAMES[ch]
                )));
            }
            channel_mean.push(mean);
            channel_sd.push(sd);
        }

        let mut met_mean = vec![0.0f64; 8];
        let mut met_sd = vec![0.0f64; 8];
        let mut met_degenerate = Vec::new();
        let n_scenes = scenes.len() as f64;
        for (_, met, _) in scenes {
            for (i, v) in met.to_array().iter().enumerate() {
                met_mean[i] += v;
                met_sd[i] += v * v;
            }
        }
        for i in 0..8 {
            met_mean[i] /= n_scenes;
            let var = (met_sd[i] / n_scenes - met_mean[i] * met_mean[i]).max(0.0);
            let sd = var.sqrt();
            // A met variable constant across training flights carries no
            // signal; pin its scale so standardization stays defined.
            if sd < 1e-12 {
                met_degenerate.push(i);
                met_sd[i] = 1.0;
            } else {
                met_sd[i] = sd;
            }
        }

        let mut label_sum = 0.0f64;
        let mut label_n = 0usize;
        for (stack, _, thermal) in scenes {
            if stack.width() != thermal.width || stack.height() != thermal.height {
                return Err(Error::dimension("thermal grid not co-registered with stack"));
            }
            for (&t, &g) in thermal.values().iter().zip(stack.tgi().values()) {
                if t.is_finite() && (g as f64) <= TGI_THRESHOLD {
                    label_sum += t as f64;
                    label_n += 1;
                }
            }
        }
        if label_n == 0 {
            return Err(Error::compute("no valid (non-vegetation) label pixels"));
        }

        Ok(Standardizer {
            channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            channel_mean,
            channel_sd,
            met_names: MetVector::NAMES.iter().map(|s| s.to_string()).collect(),
            met_mean,
            met_sd,
            met_degenerate,
            label_mean: label_sum / label_n as f64,
        })
    }

    /// Standardize a full stack: `(x - mean) / sd` per channel.
    pub fn standardize_stack(&self, stack: &FeatureStack) -> FeatureStack {
        let channels = (0..5)
            .map(|ch| {
                let src = stack.channel(ch);
                let mut g = src.clone();
                let mean = self.channel_mean[ch];
                let sd = self.channel_sd[ch];
                for v in g.values_mut() {
                    *v = ((*v as f64 - mean) / sd) as f32;
                }
                (CHANNEL_NAMES[ch].to_string(), g)
            })
            .collect();
        FeatureStack { stack: GridStack::new(channels).expect("shapes preserved") }
    }

    /// Invert `standardize_stack`.
    pub fn destandardize_stack(&self, stack: &FeatureStack) -> FeatureStack {
        let channels = (0..5)
            .map(|ch| {
                let src = stack.channel(ch);
                let mut g = src.clone();
                let mean = self.channel_mean[ch];
                let sd = self.channel_sd[ch];
                for v in g.values_mut() {
                    *v = (*v as f64 * sd + mean) as f32;
                }
                (CHANNEL_NAMES[ch].to_string(), g)
            })
            .collect();
        FeatureStack { stack: GridStack::new(channels).expect("shapes preserved") }
    }

    pub fn standardize_met(&self, met: &MetVector) -> [f64; 8] {
        let raw = met.to_array();
        let mut out = [0.0; 8];
        for i in 0..8 {
            out[i] = (raw[i] - self.met_mean[i]) / self.met_sd[i];
        }
        out
    }

    pub fn destandardize_met(&self, met: &[f64; 8]) -> [f64; 8] {
        let mut out = [0.0; 8];
        for i in 0..8 {
            out[i] = met[i] * self.met_sd[i] + self.met_mean[i];
        }
        out
    }

    /// Center a label (degrees C).
    pub fn center_label(&self, label: f64) -> f64 {
        label - self.label_mean
    }

    pub fn uncenter_label(&self, centered: f64) -> f64 {
        centered + self.label_mean
    }

    /// Canonical JSON encoding.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("standardizer serializes")
    }

    pub fn from_json(json: &str) -> Result<Standardizer> {
        serde_json::from_str(json).map_err(|e| Error::format(format!("standardizer decode: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Standardizer> {
        Standardizer::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex digest of the canonical JSON; datasets record this so a
    /// mismatched standardizer is detectable.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::MetVector;
    use rand::{Rng, SeedableRng};

    fn grid_from(values: Vec<f32>, w: usize, h: usize) -> Grid {
        Grid::new(w, h, 0.15, values).unwrap()
    }

    #[test]
    fn gray_pixels_have_zero_tgi() {
        let v = Grid::filled(3, 3, 0.42);
        let t = tgi(&v, &v, &v).unwrap();
        assert!(t.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pure_green_tgi_is_one() {
        let zero = Grid::zeros(2, 2);
        let one = Grid::filled(2, 2, 1.0);
        let t = tgi(&zero, &one, &zero).unwrap();
        assert!((t.get(0, 0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tgi_derived_example() {
        let r = Grid::filled(1, 1, 0.30);
        let g = Grid::filled(1, 1, 0.45);
        let b = Grid::filled(1, 1, 0.25);
        let t = tgi(&r, &g, &b).unwrap();
        assert!((t.get(0, 0) as f64 - 0.1805).abs() < 1e-6);
    }

    #[test]
    fn tgi_shift_invariance_exact_on_representable_inputs() {
        // Channel values and shifts quantized to 1/1024 add exactly in
        // f32, so the (G-R, G-B) form yields bit-identical output.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 16;
        let q = |x: u32| x as f32 / 1024.0;
        let mut r = Grid::zeros(n, n);
        let mut g = Grid::zeros(n, n);
        let mut b = Grid::zeros(n, n);
        for row in 0..n {
            for col in 0..n {
                r.set(row, col, q(rng.random_range(0..512)));
                g.set(row, col, q(rng.random_range(0..512)));
                b.set(row, col, q(rng.random_range(0..512)));
            }
        }
        let base = tgi(&r, &g, &b).unwrap();
        for c_shift in [q(64), q(256), q(511)] {
            let shift = |g: &Grid| {
                let mut s = g.clone();
                for v in s.values_mut() {
                    *v += c_shift;
                }
                s
            };
            let shifted = tgi(&shift(&r), &shift(&g), &shift(&b)).unwrap();
            for (a, s) in base.values().iter().zip(shifted.values()) {
                assert_eq!(a.to_bits(), s.to_bits());
            }
        }
    }

    #[test]
    fn vegetation_mask_is_strict_at_threshold() {
        let t = grid_from(vec![0.04, 0.05, 0.0, -0.2], 2, 2);
        let m = vegetation_mask(&t, TGI_THRESHOLD);
        assert_eq!(m.values(), &[0.0, 1.0, 0.0, 0.0]);
        // Re-thresholding the thresholded map is idempotent in effect:
        // mask of the mask at the same threshold flags the same pixels.
        let again = vegetation_mask(&m, TGI_THRESHOLD);
        assert_eq!(again.values(), m.values());
    }

    #[test]
    fn all_gray_image_has_empty_mask() {
        let v = Grid::filled(4, 4, 0.5);
        let t = tgi(&v, &v, &v).unwrap();
        let m = vegetation_mask(&t, TGI_THRESHOLD);
        assert!(m.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn assemble_checks_registration() {
        let g = || Grid::zeros(8, 8);
        assert!(assemble_stack(g(), g(), g(), g(), g()).is_ok());
        let odd = Grid::zeros(8, 9);
        assert!(assemble_stack(g(), g(), g(), g(), odd).is_err());
        let wrong_res = Grid::zeros(8, 8).with_resolution(0.3);
        assert!(assemble_stack(g(), g(), wrong_res, g(), g()).is_err());
    }

    fn demo_scene(seed: u64, n: usize) -> (FeatureStack, MetVector, Grid) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        fn mk(rng: &mut rand_chacha::ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Grid {
            let mut g = Grid::zeros(n, n);
            for v in g.values_mut() {
                *v = rng.random_range(lo..hi);
            }
            g
        }
        let radiation = mk(&mut rng, n, 100.0, 900.0);
        let skyview = mk(&mut rng, n, 0.6, 1.0);
        let tgi_g = mk(&mut rng, n, -0.05, 0.03);
        let height = mk(&mut rng, n, 0.0, 1.0);
        let mut shade = Grid::zeros(n, n);
        for v in shade.values_mut() {
            *v = if rng.random_bool(0.3) { 1.0 } else { 0.0 };
        }
        let thermal = mk(&mut rng, n, 25.0, 45.0);
        let stack = assemble_stack(radiation, shade, skyview, tgi_g, height).unwrap();
        (stack, MetVector::default(), thermal)
    }

    #[test]
    fn fit_stores_channel_stats() {
        let (stack, met, thermal) = demo_scene(1, 24);
        let std = Standardizer::fit(&[(&stack, &met, &thermal)]).unwrap();
        // Brute-force mean/SD over the radiation pixel array.
        let vals: Vec<f64> = stack.radiation().values().iter().map(|&v| v as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        assert!((std.channel_mean[0] - mean).abs() < 1e-9);
        assert!((std.channel_sd[0] - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constant_channel_is_rejected() {
        let (stack, met, thermal) = demo_scene(2, 16);
        let all_open = assemble_stack(
            stack.radiation().clone(),
            Grid::zeros(16, 16), // constant shade
            stack.skyview().clone(),
            stack.tgi().clone(),
            stack.object_height().clone(),
        )
        .unwrap();
        let err = Standardizer::fit(&[(&all_open, &met, &thermal)]).unwrap_err();
        assert!(matches!(err, Error::Compute(_)), "{err}");
    }

    #[test]
    fn two_scene_fit_matches_concatenation() {
        let (s1, m1, t1) = demo_scene(3, 16);
        let (s2, m2, t2) = demo_scene(4, 16);
        let std = Standardizer::fit(&[(&s1, &m1, &t1), (&s2, &m2, &t2)]).unwrap();
        for ch in 0..5 {
            let vals: Vec<f64> = s1
                .channel(ch)
                .values()
                .iter()
                .chain(s2.channel(ch).values())
                .map(|&v| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!((std.channel_mean[ch] - mean).abs() < 1e-9);
            assert!((std.channel_sd[ch] - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn standardized_training_channels_are_zero_mean_unit_sd() {
        let (stack, met, thermal) = demo_scene(5, 32);
        let std = Standardizer::fit(&[(&stack, &met, &thermal)]).unwrap();
        let z = std.standardize_stack(&stack);
        for ch in 0..5 {
            let vals: Vec<f64> = z.channel(ch).values().iter().map(|&v| v as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {ch} sd {}", var.sqrt());
        }
    }

    #[test]
    fn inverse_transform_is_exact_within_float_rounding() {
        let (stack, met, thermal) = demo_scene(6, 24);
        let std = Standardizer::fit(&[(&stack, &met, &thermal)]).unwrap();
        let back = std.destandardize_stack(&std.standardize_stack(&stack));
        for ch in 0..5 {
            for (a, b) in stack.channel(ch).values().iter().zip(back.channel(ch).values()) {
                let scale = a.abs().max(1.0);
                assert!(
                    (a - b).abs() / scale < 1e-6,
                    "channel {ch}: {a} vs {b}"
                );
            }
        }
        let zmet = std.standardize_met(&met);
        let unmet = std.destandardize_met(&zmet);
        for (a, b) in met.to_array().iter().zip(&unmet) {
            assert!((a - b).abs() / a.abs().max(1.0) < 1e-9);
        }
    }

    #[test]
    fn label_centering_is_subtraction() {
        let (stack, met, thermal) = demo_scene(7, 16);
        let mut std = Standardizer::fit(&[(&stack, &met, &thermal)]).unwrap();
        std.label_mean = 30.0;
        assert_eq!(std.center_label(42.0), 12.0);
        assert_eq!(std.uncenter_label(12.0), 42.0);
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let (stack, met, thermal) = demo_scene(8, 16);
        let std = Standardizer::fit(&[(&stack, &met, &thermal)]).unwrap();
        let fp1 = std.fingerprint();
        let roundtrip = Standardizer::from_json(&std.to_json()).unwrap();
        assert_eq!(fp1, roundtrip.fingerprint());
        let mut other = std.clone();
        other.label_mean += 1.0;
        assert_ne!(fp1, other.fingerprint());
    }
}
