//! The regression network: stem conv, residual stages, flatten,
//! met-vector concatenation, and the two-layer head. Forward and exact
//! reverse-mode backward, both deterministic.

use crate::error::{Error, Result};
use crate::nn::layout::{build_layout, BlockLayout, ModelLayout};
use crate::nn::ops::{
    avg_pool2_backward, avg_pool2_forward, batchnorm_backward, batchnorm_eval, batchnorm_forward,
    conv_backward, conv_forward, linear_backward, linear_forward, relu, relu_backward, BnCache,
    Workspace,
};
use crate::nn::params::{init_params, NormState, ParamSet};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::{Feat, Tensor4};
use crate::nn::ModelConfig;

const BN_MOMENTUM: f64 = 0.1;

pub struct Model<S> {
    pub cfg: ModelConfig,
    pub layout: ModelLayout,
    pub params: ParamSet<S>,
    pub norm: Option<NormState<S>>,
}

pub(crate) struct BlockCache<S> {
    h1: Feat<S>,
    bn1: Option<BnCache<S>>,
    bn2: Option<BnCache<S>>,
    proj_bn: Option<BnCache<S>>,
}

/// Everything backward needs, captured during a cached forward pass.
pub struct ForwardCache<S> {
    input: Feat<S>,
    stem_bn: Option<BnCache<S>>,
    /// Post-rectifier activations: stem output, then every block output.
    acts: Vec<Feat<S>>,
    blocks: Vec<BlockCache<S>>,
    head_in: Vec<S>,
    fc1_out: Vec<S>,
    batch: usize,
}

/// Parameter gradients plus input-side gradients.
pub struct Gradients<S> {
    pub params: ParamSet<S>,
    /// Gradient w.r.t. the met inputs, `[batch][met_inputs]`.
    pub met: Vec<S>,
    /// Gradient w.r.t. the input tiles, when requested.
    pub input: Option<Tensor4<S>>,
}

impl<S: Scalar> Model<S> {
    /// Fresh model with seeded Kaiming initialization.
    pub fn new(cfg: &ModelConfig, tile: usize, seed: u64) -> Result<Self> {
        let layout = build_layout(cfg, tile)?;
        let params = init_params(&layout, seed);
        let norm = cfg.use_batchnorm.then(|| NormState::new(&layout));
        Ok(Model { cfg: cfg.clone(), layout, params, norm })
    }

    pub fn from_params(cfg: &ModelConfig, tile: usize, params: ParamSet<S>, norm: Option<NormState<S>>) -> Result<Self> {
        let layout = build_layout(cfg, tile)?;
        if params.tensors.len() != layout.params.len() {
            return Err(Error::dimension("parameter table does not match layout"));
        }
        for (t, d) in params.tensors.iter().zip(&layout.params) {
            if t.desc.path != d.path || t.data.len() != d.len() {
                return Err(Error::dimension(format!("parameter {} does not match layout", t.desc.path)));
            }
        }
        if cfg.use_batchnorm && norm.is_none() {
            return Err(Error::config("batchnorm model needs norm state"));
        }
        Ok(Model { cfg: cfg.clone(), layout, params, norm })
    }

    pub fn tile_size(&self) -> usize {
        self.layout.tile
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    fn check_inputs(&self, tiles: &Tensor4<S>, met: &[S]) -> Result<usize> {
        let [n, c, h, w] = tiles.dims;
        if c != self.cfg.input_channels || h != self.layout.tile || w != self.layout.tile {
            return Err(Error::dimension(format!(
                "expected tiles [n, {}, {}, {}], got {:?}",
                self.cfg.input_channels, self.layout.tile, self.layout.tile, tiles.dims
            )));
        }
        if met.len() != n * self.cfg.met_inputs {
            return Err(Error::dimension(format!(
                "expected {} met values for batch {n}, got {}",
                n * self.cfg.met_inputs,
                met.len()
            )));
        }
        Ok(n)
    }

    fn weights(&self, idx: usize) -> &[S] {
        &self.params.tensors[idx].data
    }

    /// Inference forward pass (frozen statistics when batch norm is on).
    pub fn forward(&self, tiles: &Tensor4<S>, met: &[S], ws: &mut Workspace<S>) -> Result<Vec<S>> {
        let n = self.check_inputs(tiles, met)?;
        let x = Feat::from_tensor(tiles);
        let mut cur = conv_forward(&x, self.weights(self.layout.stem.w_idx), self.weights(self.layout.stem.b_idx), &self.layout.stem, ws);
        if let Some(bn) = &self.layout.stem_bn {
            let (rm, rv) = &self.norm.as_ref().expect("norm state").sites[bn.state_idx];
            batchnorm_eval(&mut cur, self.weights(bn.gamma_idx), self.weights(bn.beta_idx), rm, rv);
        }
        relu(&mut cur.data);
        for stage in &self.layout.stages {
            for block in stage {
                cur = self.block_forward_eval(&cur, block, ws);
            }
        }
        let head_in = self.flatten_concat(&cur, met, n);
        let fc1 = &self.layout.fc1;
        let mut h = linear_forward(&head_in, n, self.weights(fc1.w_idx), self.weights(fc1.b_idx), fc1.in_f, fc1.out_f);
        relu(&mut h);
        let fc2 = &self.layout.fc2;
        let pred = linear_forward(&h, n, self.weights(fc2.w_idx), self.weights(fc2.b_idx), fc2.in_f, fc2.out_f);
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::compute("non-finite prediction"));
        }
        Ok(pred)
    }

    fn block_forward_eval(&self, z: &Feat<S>, block: &BlockLayout, ws: &mut Workspace<S>) -> Feat<S> {
        let mut h1 = conv_forward(z, self.weights(block.conv1.w_idx), self.weights(block.conv1.b_idx), &block.conv1, ws);
        if let Some(bn) = &block.bn1 {
            let (rm, rv) = &self.norm.as_ref().expect("norm state").sites[bn.state_idx];
            batchnorm_eval(&mut h1, self.weights(bn.gamma_idx), self.weights(bn.beta_idx), rm, rv);
        }
        relu(&mut h1.data);
        let mut h2 = conv_forward(&h1, self.weights(block.conv2.w_idx), self.weights(block.conv2.b_idx), &block.conv2, ws);
        if let Some(bn) = &block.bn2 {
            let (rm, rv) = &self.norm.as_ref().expect("norm state").sites[bn.state_idx];
            batchnorm_eval(&mut h2, self.weights(bn.gamma_idx), self.weights(bn.beta_idx), rm, rv);
        }
        match &block.proj {
            Some(proj) => {
                let mut p = conv_forward(z, self.weights(proj.w_idx), self.weights(proj.b_idx), proj, ws);
                if let Some(bn) = &block.proj_bn {
                    let (rm, rv) = &self.norm.as_ref().expect("norm state").sites[bn.state_idx];
                    batchnorm_eval(&mut p, self.weights(bn.gamma_idx), self.weights(bn.beta_idx), rm, rv);
                }
                for (a, b) in h2.data.iter_mut().zip(&p.data) {
                    *a = *a + *b;
                }
            }
            None => {
                for (a, b) in h2.data.iter_mut().zip(&z.data) {
                    *a = *a + *b;
                }
            }
        }
        relu(&mut h2.data);
        h2
    }

    /// Forward pass that records everything backward needs. With batch
    /// norm on, batch statistics are used and the running statistics are
    /// updated when `update_norm` is set.
    pub fn forward_cached(
        &mut self,
        tiles: &Tensor4<S>,
        met: &[S],
        ws: &mut Workspace<S>,
        update_norm: bool,
    ) -> Result<(Vec<S>, ForwardCache<S>)> {
        let n = self.check_inputs(tiles, met)?;
        let input = Feat::from_tensor(tiles);
        let mut cur = conv_forward(&input, self.weights(self.layout.stem.w_idx), self.weights(self.layout.stem.b_idx), &self.layout.stem, ws);
        let stem_bn_shape = self.layout.stem_bn.clone();
        let stem_bn = stem_bn_shape.as_ref().map(|bn| {
            let gamma = self.params.tensors[bn.gamma_idx].data.clone();
            let beta = self.params.tensors[bn.beta_idx].data.clone();
            let running = self.norm.as_mut().map(|ns| &mut ns.sites[bn.state_idx]);
            batchnorm_forward(&mut cur, &gamma, &beta, if update_norm { running } else { None }, BN_MOMENTUM)
        });
        relu(&mut cur.data);

        let mut acts = vec![cur];
        let mut blocks = Vec::new();
        let stage_layouts = self.layout.stages.clone();
        for stage in &stage_layouts {
            for block in stage {
                let (out, cache) = self.block_forward_train(acts.last().unwrap(), block, ws, update_norm);
                blocks.push(cache);
                acts.push(out);
            }
        }

        let head_in = self.flatten_concat(acts.last().unwrap(), met, n);
        let fc1 = &self.layout.fc1;
        let mut fc1_out = linear_forward(&head_in, n, self.weights(fc1.w_idx), self.weights(fc1.b_idx), fc1.in_f, fc1.out_f);
        relu(&mut fc1_out);
        let fc2 = &self.layout.fc2;
        let pred = linear_forward(&fc1_out, n, self.weights(fc2.w_idx), self.weights(fc2.b_idx), fc2.in_f, fc2.out_f);
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::compute("non-finite prediction"));
        }
        let cache = ForwardCache { input, stem_bn, acts, blocks, head_in, fc1_out, batch: n };
        Ok((pred, cache))
    }

    fn block_forward_train(
        &mut self,
        z: &Feat<S>,
        block: &BlockLayout,
        ws: &mut Workspace<S>,
        update_norm: bool,
    ) -> (Feat<S>, BlockCache<S>) {
        let mut h1 = conv_forward(z, self.weights(block.conv1.w_idx), self.weights(block.conv1.b_idx), &block.conv1, ws);
        let bn1 = block.bn1.as_ref().map(|bn| {
            let gamma = self.params.tensors[bn.gamma_idx].data.clone();
            let beta = self.params.tensors[bn.beta_idx].data.clone();
            let running = self.norm.as_mut().map(|ns| &mut ns.sites[bn.state_idx]);
            batchnorm_forward(&mut h1, &gamma, &beta, if update_norm { running } else { None }, BN_MOMENTUM)
        });
        relu(&mut h1.data);
        let mut h2 = conv_forward(&h1, self.weights(block.conv2.w_idx), self.weights(block.conv2.b_idx), &block.conv2, ws);
        let bn2 = block.bn2.as_ref().map(|bn| {
            let gamma = self.params.tensors[bn.gamma_idx].data.clone();
            let beta = self.params.tensors[bn.beta_idx].data.clone();
            let running = self.norm.as_mut().map(|ns| &mut ns.sites[bn.state_idx]);
            batchnorm_forward(&mut h2, &gamma, &beta, if update_norm { running } else { None }, BN_MOMENTUM)
        });
        let mut proj_bn = None;
        match &block.proj {
            Some(proj) => {
                let mut p = conv_forward(z, self.weights(proj.w_idx), self.weights(proj.b_idx), proj, ws);
                proj_bn = block.proj_bn.as_ref().map(|bn| {
                    let gamma = self.params.tensors[bn.gamma_idx].data.clone();
                    let beta = self.params.tensors[bn.beta_idx].data.clone();
                    let running = self.norm.as_mut().map(|ns| &mut ns.sites[bn.state_idx]);
                    batchnorm_forward(&mut p, &gamma, &beta, if update_norm { running } else { None }, BN_MOMENTUM)
                });
                for (a, b) in h2.data.iter_mut().zip(&p.data) {
                    *a = *a + *b;
                }
            }
            None => {
                for (a, b) in h2.data.iter_mut().zip(&z.data) {
                    *a = *a + *b;
                }
            }
        }
        relu(&mut h2.data);
        (h2, BlockCache { h1, bn1, bn2, proj_bn })
    }

    /// `[channels][batch][hw]` activations to `[batch][flat + met]` rows.
    fn flatten_concat(&self, feat: &Feat<S>, met: &[S], n: usize) -> Vec<S> {
        let hw = feat.hw();
        let flat = self.layout.flat_len;
        let met_n = self.cfg.met_inputs;
        let mut out = vec![S::zero(); n * (flat + met_n)];
        for b in 0..n {
            let row = &mut out[b * (flat + met_n)..(b + 1) * (flat + met_n)];
            for c in 0..feat.c {
                let src = &feat.data[(c * n + b) * hw..(c * n + b + 1) * hw];
                row[c * hw..(c + 1) * hw].copy_from_slice(src);
            }
            row[flat..].copy_from_slice(&met[b * met_n..(b + 1) * met_n]);
        }
        out
    }

    /// Exact reverse-mode gradients for the batch of the given cache.
    /// `dpred` is the loss gradient w.r.t. each prediction.
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        dpred: &[S],
        ws: &mut Workspace<S>,
        want_input_grad: bool,
    ) -> Result<Gradients<S>> {
        let n = cache.batch;
        if dpred.len() != n {
            return Err(Error::dimension("loss gradient length != batch size"));
        }
        let mut grads = self.params.zeros_like();
        let fc2 = &self.layout.fc2;
        let fc1 = &self.layout.fc1;

        let (dw2, db2) = (fc2.w_idx, fc2.b_idx);
        let mut dfc1 = {
            let [dw, db] = disjoint_mut(&mut grads, dw2, db2);
            linear_backward(&cache.fc1_out, n, self.weights(fc2.w_idx), dpred, fc2.in_f, fc2.out_f, dw, db)
        };
        relu_backward(&mut dfc1, &cache.fc1_out);
        let dhead = {
            let [dw, db] = disjoint_mut(&mut grads, fc1.w_idx, fc1.b_idx);
            linear_backward(&cache.head_in, n, self.weights(fc1.w_idx), &dfc1, fc1.in_f, fc1.out_f, dw, db)
        };

        // Split head gradient into the trunk part and the met part.
        let flat = self.layout.flat_len;
        let met_n = self.cfg.met_inputs;
        let last = cache.acts.last().unwrap();
        let hw = last.hw();
        let mut dmet = vec![S::zero(); n * met_n];
        let mut dcur = Feat::zeros(last.c, n, last.h, last.w);
        for b in 0..n {
            let row = &dhead[b * (flat + met_n)..(b + 1) * (flat + met_n)];
            for c in 0..last.c {
                let dst = &mut dcur.data[(c * n + b) * hw..(c * n + b + 1) * hw];
                dst.copy_from_slice(&row[c * hw..(c + 1) * hw]);
            }
            dmet[b * met_n..(b + 1) * met_n].copy_from_slice(&row[flat..]);
        }

        // Residual stages, in reverse.
        let all_blocks: Vec<&BlockLayout> = self.layout.stages.iter().flatten().collect();
        for (i, block) in all_blocks.iter().enumerate().rev() {
            let z = &cache.acts[i];
            let out = &cache.acts[i + 1];
            let bc = &cache.blocks[i];
            relu_backward(&mut dcur.data, &out.data);

            let mut dz = Feat::zeros(z.c, n, z.h, z.w);
            // Skip branch.
            match &block.proj {
                Some(proj) => {
                    let mut dskip = dcur.clone();
                    if let Some(bn) = &block.proj_bn {
                        let [dg, db] = disjoint_mut(&mut grads, bn.gamma_idx, bn.beta_idx);
                        batchnorm_backward(&mut dskip, bc.proj_bn.as_ref().unwrap(), self.weights(bn.gamma_idx), dg, db);
                    }
                    let [dw, db] = disjoint_mut(&mut grads, proj.w_idx, proj.b_idx);
                    conv_backward(z, self.weights(proj.w_idx), &dskip, proj, dw, db, Some(&mut dz), ws);
                }
                None => {
                    for (a, b) in dz.data.iter_mut().zip(&dcur.data) {
                        *a = *a + *b;
                    }
                }
            }
            // Main branch.
            let mut dmain = dcur;
            if let Some(bn) = &block.bn2 {
                let [dg, db] = disjoint_mut(&mut grads, bn.gamma_idx, bn.beta_idx);
                batchnorm_backward(&mut dmain, bc.bn2.as_ref().unwrap(), self.weights(bn.gamma_idx), dg, db);
            }
            let mut dh1 = Feat::zeros(bc.h1.c, n, bc.h1.h, bc.h1.w);
            {
                let [dw, db] = disjoint_mut(&mut grads, block.conv2.w_idx, block.conv2.b_idx);
                conv_backward(&bc.h1, self.weights(block.conv2.w_idx), &dmain, &block.conv2, dw, db, Some(&mut dh1), ws);
            }
            relu_backward(&mut dh1.data, &bc.h1.data);
            if let Some(bn) = &block.bn1 {
                let [dg, db] = disjoint_mut(&mut grads, bn.gamma_idx, bn.beta_idx);
                batchnorm_backward(&mut dh1, bc.bn1.as_ref().unwrap(), self.weights(bn.gamma_idx), dg, db);
            }
            {
                let [dw, db] = disjoint_mut(&mut grads, block.conv1.w_idx, block.conv1.b_idx);
                conv_backward(z, self.weights(block.conv1.w_idx), &dh1, &block.conv1, dw, db, Some(&mut dz), ws);
            }
            dcur = dz;
        }

        // Stem.
        relu_backward(&mut dcur.data, &cache.acts[0].data);
        if let Some(bn) = &self.layout.stem_bn {
            let [dg, db] = disjoint_mut(&mut grads, bn.gamma_idx, bn.beta_idx);
            batchnorm_backward(&mut dcur, cache.stem_bn.as_ref().unwrap(), self.weights(bn.gamma_idx), dg, db);
        }
        let mut dinput = want_input_grad
            .then(|| Feat::zeros(self.cfg.input_channels, n, self.layout.tile, self.layout.tile));
        {
            let stem = &self.layout.stem;
            let [dw, db] = disjoint_mut(&mut grads, stem.w_idx, stem.b_idx);
            conv_backward(&cache.input, self.weights(stem.w_idx), &dcur, stem, dw, db, dinput.as_mut(), ws);
        }

        Ok(Gradients { params: grads, met: dmet, input: dinput.map(|f| f.to_tensor()) })
    }

    /// Standalone 2x2 average pooling over an NCHW batch; part of the
    /// layer zoo so its gradient is verified alongside the trunk layers.
    pub fn avg_pool2(tiles: &Tensor4<S>) -> Tensor4<S> {
        let feat = Feat::from_tensor(tiles);
        avg_pool2_forward(&feat).to_tensor()
    }

    /// Gradient of [`Model::avg_pool2`].
    pub fn avg_pool2_grad(dy: &Tensor4<S>, in_h: usize, in_w: usize) -> Tensor4<S> {
        let feat = Feat::from_tensor(dy);
        avg_pool2_backward(&feat, in_h, in_w).to_tensor()
    }
}

/// Two disjoint tensor buffers out of one gradient set.
fn disjoint_mut<S>(set: &mut ParamSet<S>, a: usize, b: usize) -> [&mut [S]; 2] {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = set.tensors.split_at_mut(b);
        [&mut lo[a].data, &mut hi[0].data]
    } else {
        let (lo, hi) = set.tensors.split_at_mut(a);
        let [x, y] = [&mut hi[0].data, &mut lo[b].data];
        [x, y]
    }
}
