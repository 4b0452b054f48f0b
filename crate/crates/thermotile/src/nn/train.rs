//! The training loop: seeded shuffling, per-epoch checkpoints, and
//! best-validation model selection. Single-threaded and deterministic.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::adam::{adam_step, AdamConfig, AdamState};
use crate::nn::loss::mse_loss;
use crate::nn::model::Model;
use crate::nn::ops::Workspace;
use crate::nn::params::{save_checkpoint_file, CheckpointMeta};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor4;
use crate::nn::ModelConfig;
use crate::synth::mix_seed;

/// Dense tile regression set: `n` records of `5*k*k` standardized
/// inputs, 8 standardized met scalars, and a centered label.
#[derive(Debug, Clone, Default)]
pub struct TileBatch {
    pub k: usize,
    pub n: usize,
    pub tiles: Vec<f32>,
    pub met: Vec<f32>,
    pub labels: Vec<f32>,
}

impl TileBatch {
    pub fn new(k: usize) -> Self {
        TileBatch { k, n: 0, tiles: Vec::new(), met: Vec::new(), labels: Vec::new() }
    }

    pub fn push(&mut self, tile: &[f32], met: &[f32], label: f32) {
        debug_assert_eq!(tile.len(), 5 * self.k * self.k);
        debug_assert_eq!(met.len(), 8);
        self.tiles.extend_from_slice(tile);
        self.met.extend_from_slice(met);
        self.labels.push(label);
        self.n += 1;
    }

    fn gather<S: Scalar>(&self, idx: &[usize]) -> (Tensor4<S>, Vec<S>, Vec<S>) {
        let rec = 5 * self.k * self.k;
        let mut tiles = Tensor4::zeros([idx.len(), 5, self.k, self.k]);
        let mut met = Vec::with_capacity(idx.len() * 8);
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            for (dst, &src) in tiles.data[row * rec..(row + 1) * rec]
                .iter_mut()
                .zip(&self.tiles[i * rec..(i + 1) * rec])
            {
                *dst = S::from_f64(src as f64);
            }
            met.extend(self.met[i * 8..(i + 1) * 8].iter().map(|&v| S::from_f64(v as f64)));
            labels.push(S::from_f64(self.labels[i] as f64));
        }
        (tiles, met, labels)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Per-epoch checkpoints are written here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 100, batch_size: 64, lr: 1e-4, seed: 0, checkpoint_dir: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

pub struct TrainResult<S> {
    /// Model restored to the checkpoint with the lowest validation MSE.
    pub model: Model<S>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub history: Vec<EpochStats>,
}

/// Mean squared error of a model over a tile set, in batches.
pub fn evaluate_mse<S: Scalar>(
    model: &Model<S>,
    data: &TileBatch,
    batch_size: usize,
    ws: &mut Workspace<S>,
) -> Result<f64> {
    if data.n == 0 {
        return Err(Error::config("evaluate_mse on an empty set"));
    }
    let mut se = 0.0f64;
    let idx: Vec<usize> = (0..data.n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (tiles, met, labels) = data.gather::<S>(chunk);
        let pred = model.forward(&tiles, &met, ws)?;
        for (p, l) in pred.iter().zip(&labels) {
            let e = p.as_f64() - l.as_f64();
            se += e * e;
        }
    }
    Ok(se / data.n as f64)
}

/// Train a model of the given config at tile size `train.k`.
///
/// Each epoch shuffles with a seeded generator, runs Adam over the
/// batches, evaluates validation MSE, and snapshots the parameters; the
/// returned model carries the snapshot with the lowest validation MSE
/// (ties keep the earliest epoch). Divergence aborts with the epoch.
pub fn train_model<S: Scalar>(
    cfg: &ModelConfig,
    train: &TileBatch,
    val: &TileBatch,
    opts: &TrainOptions,
) -> Result<TrainResult<S>> {
    if train.n == 0 || val.n == 0 {
        return Err(Error::config("training and validation sets must be nonempty"));
    }
    if train.k != val.k {
        return Err(Error::dimension("train/val tile sizes differ"));
    }
    let mut model = Model::<S>::new(cfg, train.k, mix_seed(opts.seed, 0xA11))?;
    let mut ws = Workspace::new();
    let mut adam = AdamState::new(&model.params, AdamConfig { lr: opts.lr, ..AdamConfig::default() });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0x5F));

    let mut history = Vec::with_capacity(opts.epochs);
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut best_norm = model.norm.clone();
    if opts.epochs == 0 {
        return Ok(TrainResult { model, best_epoch: 0, best_val_mse: f64::NAN, history });
    }

    let mut indices: Vec<usize> = (0..train.n).collect();
    for epoch in 1..=opts.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut train_se = 0.0f64;
        for chunk in indices.chunks(opts.batch_size.max(1)) {
            let (tiles, met, labels) = train.gather::<S>(chunk);
            let (pred, cache) = model.forward_cached(&tiles, &met, &mut ws, true)?;
            let (loss, dpred) = mse_loss(&pred, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            train_se += loss * chunk.len() as f64;
            let grads = model.backward(&cache, &dpred, &mut ws, false)?;
            adam_step(&mut model.params, &grads.params, &mut adam)?;
        }
        let train_mse = train_se / train.n as f64;
        let val_mse = evaluate_mse(&model, val, opts.batch_size, &mut ws)?;
        if !val_mse.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochStats { epoch, train_mse, val_mse });
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = model.params.clone();
            best_norm = model.norm.clone();
        }
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            save_epoch_checkpoint(&model, cfg, train.k, epoch, val_mse, opts.seed, dir)?;
        }
    }

    model.params = best_params;
    model.norm = best_norm;
    Ok(TrainResult { model, best_epoch, best_val_mse: best_val, history })
}

fn save_epoch_checkpoint<S: Scalar>(
    model: &Model<S>,
    cfg: &ModelConfig,
    k: usize,
    epoch: usize,
    val_mse: f64,
    seed: u64,
    dir: &std::path::Path,
) -> Result<()> {
    // Checkpoints are an f32 format; downcast when training in f64.
    let params32 = crate::nn::params::ParamSet {
        tensors: model
            .params
            .tensors
            .iter()
            .map(|t| crate::nn::params::ParamTensor {
                desc: t.desc.clone(),
                data: t.data.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect(),
    };
    let norm32 = model.norm.as_ref().map(|ns| crate::nn::params::NormState {
        sites: ns
            .sites
            .iter()
            .map(|(m, v)| {
                (
                    m.iter().map(|x| x.as_f64() as f32).collect(),
                    v.iter().map(|x| x.as_f64() as f32).collect(),
                )
            })
            .collect(),
    });
    let meta = CheckpointMeta {
        config: cfg.clone(),
        tile_size: k,
        epoch,
        val_mse,
        seed,
        tensors: Vec::new(),
    };
    save_checkpoint_file(dir.join(format!("epoch_{epoch:03}.ckpt")), &meta, &params32, norm32.as_ref())
}

/// History rows as CSV: `epoch,train_mse,val_mse`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for h in history {
        out.push_str(&format!("{},{:.9},{:.9}\n", h.epoch, h.train_mse, h.val_mse));
    }
    out
}
