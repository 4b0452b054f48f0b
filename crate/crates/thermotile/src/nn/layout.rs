//! Model configuration and the derived layer layout.
//!
//! The architecture is a reduced residual network: a 3x3 stem over the
//! five feature channels, one or more residual stages (two 3x3 convs
//! plus skip per block, 1x1 projection when width or stride changes,
//! stride-2 downsampling at stage entry while the spatial dim is at
//! least 4), then flatten, concatenate the eight meteorological
//! variables, a 128-unit rectified hidden layer, and a single output.
//! The rectifier is the only activation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::scalar::Precision;

/// Spatial size below which stage entries stop downsampling.
pub const MIN_DOWNSAMPLE_DIM: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_stem_width")]
    pub stem_width: usize,
    #[serde(default = "default_stage_widths")]
    pub stage_widths: Vec<usize>,
    #[serde(default = "default_blocks_per_stage")]
    pub blocks_per_stage: usize,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_met_inputs")]
    pub met_inputs: usize,
    #[serde(default)]
    pub use_batchnorm: bool,
    #[serde(default)]
    pub precision: Precision,
}

fn default_input_channels() -> usize {
    5
}
fn default_stem_width() -> usize {
    16
}
fn default_stage_widths() -> Vec<usize> {
    vec![16, 32, 64]
}
fn default_blocks_per_stage() -> usize {
    1
}
fn default_head_hidden() -> usize {
    128
}
fn default_met_inputs() -> usize {
    8
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: default_input_channels(),
            stem_width: default_stem_width(),
            stage_widths: default_stage_widths(),
            blocks_per_stage: default_blocks_per_stage(),
            head_hidden: default_head_hidden(),
            met_inputs: default_met_inputs(),
            use_batchnorm: false,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.stem_width == 0 || self.head_hidden == 0 {
            return Err(Error::config("model widths must be positive"));
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::config("stage_widths must be nonempty and positive"));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::config("blocks_per_stage must be at least 1"));
        }
        Ok(())
    }
}

/// Geometry of one convolution site, with indices of its parameter
/// tensors in the canonical parameter list.
#[derive(Debug, Clone)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub w_idx: usize,
    pub b_idx: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.ksize * self.ksize
    }
    pub fn col_len(&self, batch: usize) -> usize {
        self.in_c * self.ksize * self.ksize * batch * self.out_h * self.out_w
    }
}

#[derive(Debug, Clone)]
pub struct LinShape {
    pub in_f: usize,
    pub out_f: usize,
    pub w_idx: usize,
    pub b_idx: usize,
}

/// Batch-norm site: parameter indices plus the index of its running
/// mean/var pair in the model's norm state.
#[derive(Debug, Clone)]
pub struct BnShape {
    pub c: usize,
    pub gamma_idx: usize,
    pub beta_idx: usize,
    pub state_idx: usize,
}

#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub conv1: ConvShape,
    pub bn1: Option<BnShape>,
    pub conv2: ConvShape,
    pub bn2: Option<BnShape>,
    pub proj: Option<ConvShape>,
    pub proj_bn: Option<BnShape>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamDesc {
    pub path: String,
    pub shape: Vec<usize>,
}

impl ParamDesc {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full derived layout for one (config, tile size) pair.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub tile: usize,
    pub met_inputs: usize,
    pub stem: ConvShape,
    pub stem_bn: Option<BnShape>,
    pub stages: Vec<Vec<BlockLayout>>,
    /// Channels * spatial after the last stage.
    pub flat_len: usize,
    pub fc1: LinShape,
    pub fc2: LinShape,
    pub params: Vec<ParamDesc>,
    pub n_bn_sites: usize,
}

struct LayoutBuilder {
    params: Vec<ParamDesc>,
    bn_sites: usize,
    use_bn: bool,
}

impl LayoutBuilder {
    fn push(&mut self, path: String, shape: Vec<usize>) -> usize {
        self.params.push(ParamDesc { path, shape });
        self.params.len() - 1
    }

    fn conv(
        &mut self,
        path: &str,
        in_c: usize,
        out_c: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
    ) -> ConvShape {
        let out_h = (in_h + 2 * pad - ksize) / stride + 1;
        let out_w = (in_w + 2 * pad - ksize) / stride + 1;
        let w_idx = self.push(format!("{path}.weight"), vec![out_c, in_c, ksize, ksize]);
        let b_idx = self.push(format!("{path}.bias"), vec![out_c]);
        ConvShape { in_c, out_c, ksize, stride, pad, in_h, in_w, out_h, out_w, w_idx, b_idx }
    }

    fn bn(&mut self, path: &str, c: usize) -> Option<BnShape> {
        if !self.use_bn {
            return None;
        }
        let gamma_idx = self.push(format!("{path}.gamma"), vec![c]);
        let beta_idx = self.push(format!("{path}.beta"), vec![c]);
        let state_idx = self.bn_sites;
        self.bn_sites += 1;
        Some(BnShape { c, gamma_idx, beta_idx, state_idx })
    }

    fn linear(&mut self, path: &str, in_f: usize, out_f: usize) -> LinShape {
        let w_idx = self.push(format!("{path}.weight"), vec![out_f, in_f]);
        let b_idx = self.push(format!("{path}.bias"), vec![out_f]);
        LinShape { in_f, out_f, w_idx, b_idx }
    }
}

/// Build the canonical layout for a config and odd tile size.
pub fn build_layout(cfg: &ModelConfig, tile: usize) -> Result<ModelLayout> {
    cfg.validate()?;
    if tile % 2 == 0 || tile == 0 {
        return Err(Error::config(format!("tile size must be odd, got {tile}")));
    }
    let mut b = LayoutBuilder { params: Vec::new(), bn_sites: 0, use_bn: cfg.use_batchnorm };

    let stem = b.conv("stem", cfg.input_channels, cfg.stem_width, 3, 1, 1, tile, tile);
    let stem_bn = b.bn("stem.bn", cfg.stem_width);

    let mut dim = stem.out_h;
    let mut width = cfg.stem_width;
    let mut stages = Vec::with_capacity(cfg.stage_widths.len());
    for (si, &stage_width) in cfg.stage_widths.iter().enumerate() {
        let mut blocks = Vec::with_capacity(cfg.blocks_per_stage);
        for bi in 0..cfg.blocks_per_stage {
            let entry = bi == 0;
            let stride = if entry && dim >= MIN_DOWNSAMPLE_DIM { 2 } else { 1 };
            let out_c = if entry { stage_width } else { width };
            let path = format!("stage{si}.block{bi}");
            let conv1 = b.conv(&format!("{path}.conv1"), width, out_c, 3, stride, 1, dim, dim);
            let bn1 = b.bn(&format!("{path}.conv1.bn"), out_c);
            let conv2 =
                b.conv(&format!("{path}.conv2"), out_c, out_c, 3, 1, 1, conv1.out_h, conv1.out_w);
            let bn2 = b.bn(&format!("{path}.conv2.bn"), out_c);
            let needs_proj = stride != 1 || width != out_c;
            let (proj, proj_bn) = if needs_proj {
                let p = b.conv(&format!("{path}.proj"), width, out_c, 1, stride, 0, dim, dim);
                let pbn = b.bn(&format!("{path}.proj.bn"), out_c);
                (Some(p), pbn)
            } else {
                (None, None)
            };
            dim = conv2.out_h;
            width = out_c;
            blocks.push(BlockLayout { conv1, bn1, conv2, bn2, proj, proj_bn });
        }
        stages.push(blocks);
    }

    let flat_len = width * dim * dim;
    let fc1 = b.linear("fc1", flat_len + cfg.met_inputs, cfg.head_hidden);
    let fc2 = b.linear("fc2", cfg.head_hidden, 1);

    Ok(ModelLayout {
        tile,
        met_inputs: cfg.met_inputs,
        stem,
        stem_bn,
        stages,
        flat_len,
        fc1,
        fc2,
        params: b.params,
        n_bn_sites: b.bn_sites,
    })
}

/// Trainable parameter count for a (config, tile size) pair.
pub fn param_count(cfg: &ModelConfig, tile: usize) -> Result<usize> {
    Ok(build_layout(cfg, tile)?.params.iter().map(|d| d.len()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_dims_follow_the_downsample_rule() {
        let cfg = ModelConfig::default();
        // 9 -> 5 -> 3 -> 3 (last stage entry sees dim 3 < 4: stride 1).
        let l = build_layout(&cfg, 9).unwrap();
        let dims: Vec<usize> = l.stages.iter().map(|s| s.last().unwrap().conv2.out_h).collect();
        assert_eq!(dims, vec![5, 3, 3]);
        assert_eq!(l.flat_len, 64 * 3 * 3);
        // 47 -> 24 -> 12 -> 6.
        let l47 = build_layout(&cfg, 47).unwrap();
        let dims47: Vec<usize> = l47.stages.iter().map(|s| s.last().unwrap().conv2.out_h).collect();
        assert_eq!(dims47, vec![24, 12, 6]);
        assert_eq!(l47.flat_len, 64 * 36);
    }

    #[test]
    fn head_grows_for_large_tiles() {
        let cfg = ModelConfig::default();
        let small: Vec<usize> = [9, 15, 21, 31]
            .iter()
            .map(|&k| build_layout(&cfg, k).unwrap().flat_len)
            .collect();
        let large: Vec<usize> = [47, 63, 81]
            .iter()
            .map(|&k| build_layout(&cfg, k).unwrap().flat_len)
            .collect();
        let max_small = *small.iter().max().unwrap();
        for (f, k) in large.iter().zip([47, 63, 81]) {
            assert!(*f > max_small, "flatten at {k} should exceed every size <= 31");
        }
    }

    #[test]
    fn param_count_changes_only_in_the_head_across_tiles() {
        let cfg = ModelConfig::default();
        let l9 = build_layout(&cfg, 9).unwrap();
        let l31 = build_layout(&cfg, 31).unwrap();
        let head9 = l9.fc1.in_f * l9.fc1.out_f;
        let head31 = l31.fc1.in_f * l31.fc1.out_f;
        let total9 = param_count(&cfg, 9).unwrap();
        let total31 = param_count(&cfg, 31).unwrap();
        assert_eq!(total9 - head9, total31 - head31, "trunk params must match");
        assert_ne!(total9, total31);
    }

    #[test]
    fn even_tiles_rejected() {
        assert!(build_layout(&ModelConfig::default(), 8).is_err());
    }

    #[test]
    fn projection_appears_exactly_when_needed() {
        let cfg = ModelConfig::default();
        let l = build_layout(&cfg, 9).unwrap();
        // Stage 0: width 16 -> 16 but stride 2: projection required.
        assert!(l.stages[0][0].proj.is_some());
        // Two blocks per stage: second block is identity-skip.
        let cfg2 = ModelConfig { blocks_per_stage: 2, ..ModelConfig::default() };
        let l2 = build_layout(&cfg2, 9).unwrap();
        assert!(l2.stages[0][1].proj.is_none());
    }

    #[test]
    fn batchnorm_adds_parameters() {
        let plain = param_count(&ModelConfig::default(), 9).unwrap();
        let bn_cfg = ModelConfig { use_batchnorm: true, ..ModelConfig::default() };
        let with_bn = param_count(&bn_cfg, 9).unwrap();
        assert!(with_bn > plain);
        let l = build_layout(&bn_cfg, 9).unwrap();
        assert!(l.n_bn_sites > 0);
    }
}
