//! Parameter storage, seeded initialization, and the checkpoint format.
//!
//! Checkpoint layout mirrors MCG1: magic `TTC1`, little-endian u32 JSON
//! length, JSON metadata (config, tile size, epoch, validation loss,
//! seed, tensor table), then every tensor as little-endian f32 in
//! canonical order. Batch-norm running statistics ride along after the
//! trainable tensors when the config enables them.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layout::{ModelLayout, ParamDesc};
use crate::nn::scalar::Scalar;
use crate::nn::ModelConfig;

const CKPT_MAGIC: &[u8; 4] = b"TTC1";

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamTensor<S> {
    pub desc: ParamDesc,
    pub data: Vec<S>,
}

/// All model parameters in canonical layer order.
#[derive(Debug, Clone)]
pub struct ParamSet<S> {
    pub tensors: Vec<ParamTensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn zeros(descs: &[ParamDesc]) -> Self {
        ParamSet {
            tensors: descs
                .iter()
                .map(|d| ParamTensor { desc: d.clone(), data: vec![S::zero(); d.len()] })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor { desc: t.desc.clone(), data: vec![S::zero(); t.data.len()] })
                .collect(),
        }
    }

    pub fn zero_fill(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(S::zero());
        }
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn by_path(&self, path: &str) -> Option<&ParamTensor<S>> {
        self.tensors.iter().find(|t| t.desc.path == path)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Kaiming fan-in initialization, seeded and sampled in canonical
/// parameter order. Biases start at zero, norm scales at one.
pub fn init_params<S: Scalar>(layout: &ModelLayout, seed: u64) -> ParamSet<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::zeros(&layout.params);
    for t in &mut set.tensors {
        let path = t.desc.path.as_str();
        if path.ends_with(".weight") {
            let fan_in: usize = t.desc.shape[1..].iter().product();
            let sd = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0f64, sd).unwrap();
            for v in &mut t.data {
                *v = S::from_f64(normal.sample(&mut rng));
            }
        } else if path.ends_with(".gamma") {
            t.data.fill(S::one());
        }
        // biases and betas stay zero
    }
    set
}

/// Batch-norm running statistics (mean, variance) per site.
#[derive(Debug, Clone)]
pub struct NormState<S> {
    pub sites: Vec<(Vec<S>, Vec<S>)>,
}

impl<S: Scalar> NormState<S> {
    pub fn new(layout: &ModelLayout) -> Self {
        let mut sites = Vec::with_capacity(layout.n_bn_sites);
        let mut widths = vec![0usize; layout.n_bn_sites];
        let mut note = |bn: &Option<crate::nn::layout::BnShape>| {
            if let Some(b) = bn {
                widths[b.state_idx] = b.c;
            }
        };
        note(&layout.stem_bn);
        for stage in &layout.stages {
            for block in stage {
                note(&block.bn1);
                note(&block.bn2);
                note(&block.proj_bn);
            }
        }
        for c in widths {
            sites.push((vec![S::zero(); c], vec![S::one(); c]));
        }
        NormState { sites }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub tile_size: usize,
    pub epoch: usize,
    pub val_mse: f64,
    pub seed: u64,
    /// (path, element count) per stored tensor, in blob order.
    pub tensors: Vec<(String, usize)>,
}

/// Write parameters (and running norm stats, when present) with metadata.
pub fn save_checkpoint<W: Write>(
    mut dest: W,
    meta_in: &CheckpointMeta,
    params: &ParamSet<f32>,
    norm: Option<&NormState<f32>>,
) -> Result<()> {
    let mut meta = meta_in.clone();
    meta.tensors = params
        .tensors
        .iter()
        .map(|t| (t.desc.path.clone(), t.data.len()))
        .collect();
    if let Some(norm) = norm {
        for (i, (rm, rv)) in norm.sites.iter().enumerate() {
            meta.tensors.push((format!("norm{i}.running_mean"), rm.len()));
            meta.tensors.push((format!("norm{i}.running_var"), rv.len()));
        }
    }
    let json = serde_json::to_vec(&meta).map_err(|e| Error::format(format!("checkpoint meta: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut push = |data: &[f32]| {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in &params.tensors {
        push(&t.data);
    }
    if let Some(norm) = norm {
        for (rm, rv) in &norm.sites {
            push(rm);
            push(rv);
        }
    }
    dest.write_all(&out)?;
    Ok(())
}

pub fn save_checkpoint_file(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    params: &ParamSet<f32>,
    norm: Option<&NormState<f32>>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    save_checkpoint(&mut w, meta, params, norm)?;
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back: metadata plus the raw tensor table.
pub fn load_checkpoint<R: Read>(mut source: R) -> Result<(CheckpointMeta, Vec<(String, Vec<f32>)>)> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[0..4] != CKPT_MAGIC {
        return Err(Error::format("not a TTC1 checkpoint"));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + json_len {
        return Err(Error::format("truncated checkpoint metadata"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[8..8 + json_len])
        .map_err(|e| Error::format(format!("checkpoint meta decode: {e}")))?;
    let mut offset = 8 + json_len;
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    for (path, len) in &meta.tensors {
        let need = len * 4;
        if bytes.len() < offset + need {
            return Err(Error::format(format!("checkpoint truncated at tensor {path}")));
        }
        let mut data = Vec::with_capacity(*len);
        for chunk in bytes[offset..offset + need].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        tensors.push((path.clone(), data));
        offset += need;
    }
    Ok((meta, tensors))
}

pub fn load_checkpoint_file(path: impl AsRef<Path>) -> Result<(CheckpointMeta, Vec<(String, Vec<f32>)>)> {
    let file = std::fs::File::open(path)?;
    load_checkpoint(std::io::BufReader::new(file))
}
