//! Central finite-difference verification of every layer type's
//! analytic gradient: convolutions (stride 1, stride 2, 1x1
//! projection), the rectifier, average pooling, the linear layers, a
//! full residual block, batch normalization, the met-concatenation
//! boundary (gradient must reach both branches), and a sampled
//! end-to-end pass over every parameter tensor of a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::layout::ConvShape;
use crate::nn::model::Model;
use crate::nn::ops::{avg_pool2_backward, avg_pool2_forward, conv_backward, conv_forward, linear_backward, linear_forward, relu, relu_backward, Workspace};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::{Feat, Tensor4};
use crate::nn::ModelConfig;

/// Default pass threshold for f64 checks.
pub const DEFAULT_TOLERANCE_F64: f64 = 1e-4;
/// Documented looser threshold when the suite runs in f32.
pub const TOLERANCE_F32: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub layer: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// One line per layer, for logs and the command-line runner.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:<18} max_rel_err {:>12.3e}  tol {:>8.1e}  n {:>4}  {}\n",
                e.layer,
                e.max_rel_err,
                e.tolerance,
                e.checked,
                if e.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Relative disagreement between an analytic and a numeric derivative.
/// Values that agree below 1e-7 in absolute terms count as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn fd_step(value: f64, scale: f64) -> f64 {
    scale * value.abs().max(1.0)
}

struct ErrTracker {
    max: f64,
    n: usize,
}

impl ErrTracker {
    fn new() -> Self {
        ErrTracker { max: 0.0, n: 0 }
    }
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max = self.max.max(relative_error(analytic, numeric));
        self.n += 1;
    }
    fn entry(self, layer: &str, tolerance: f64) -> GradCheckEntry {
        GradCheckEntry {
            layer: layer.to_string(),
            max_rel_err: self.max,
            tolerance,
            checked: self.n,
            pass: self.max < tolerance,
        }
    }
}

fn conv_shape(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, h: usize) -> ConvShape {
    ConvShape {
        in_c,
        out_c,
        ksize: k,
        stride,
        pad,
        in_h: h,
        in_w: h,
        out_h: (h + 2 * pad - k) / stride + 1,
        out_w: (h + 2 * pad - k) / stride + 1,
        w_idx: 0,
        b_idx: 0,
    }
}

/// Check one standalone convolution with loss = sum(y * projection).
fn check_conv<S: Scalar>(name: &str, shape: ConvShape, seed: u64, tol: f64, h_scale: f64) -> GradCheckEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 2;
    let mut x = Feat::<S>::zeros(shape.in_c, batch, shape.in_h, shape.in_w);
    for v in &mut x.data {
        *v = S::from_f64(rng.random_range(-1.0..1.0));
    }
    let mut w: Vec<S> = (0..shape.weight_len()).map(|_| S::from_f64(rng.random_range(-0.5..0.5))).collect();
    let mut b: Vec<S> = (0..shape.out_c).map(|_| S::from_f64(rng.random_range(-0.2..0.2))).collect();
    let proj: Vec<S> = (0..shape.out_c * batch * shape.out_h * shape.out_w)
        .map(|_| S::from_f64(rng.random_range(-1.0..1.0)))
        .collect();
    let mut ws = Workspace::new();

    let loss = |x: &Feat<S>, w: &[S], b: &[S], ws: &mut Workspace<S>| -> f64 {
        let y = conv_forward(x, w, b, &shape, ws);
        y.data.iter().zip(&proj).map(|(a, p)| a.as_f64() * p.as_f64()).sum()
    };

    let dy = Feat { c: shape.out_c, n: batch, h: shape.out_h, w: shape.out_w, data: proj.clone() };
    let mut dw = vec![S::zero(); w.len()];
    let mut db = vec![S::zero(); b.len()];
    let mut dx = Feat::zeros(shape.in_c, batch, shape.in_h, shape.in_w);
    conv_backward(&x, &w, &dy, &shape, &mut dw, &mut db, Some(&mut dx), &mut ws);

    let mut tracker = ErrTracker::new();
    for i in 0..w.len() {
        let orig = w[i].as_f64();
        let h = fd_step(orig, h_scale);
        w[i] = S::from_f64(orig + h);
        let lp = loss(&x, &w, &b, &mut ws);
        w[i] = S::from_f64(orig - h);
        let lm = loss(&x, &w, &b, &mut ws);
        w[i] = S::from_f64(orig);
        tracker.record(dw[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    for i in 0..b.len() {
        let orig = b[i].as_f64();
        let h = fd_step(orig, h_scale);
        b[i] = S::from_f64(orig + h);
        let lp = loss(&x, &w, &b, &mut ws);
        b[i] = S::from_f64(orig - h);
        let lm = loss(&x, &w, &b, &mut ws);
        b[i] = S::from_f64(orig);
        tracker.record(db[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    for i in 0..x.data.len() {
        let orig = x.data[i].as_f64();
        let h = fd_step(orig, h_scale);
        x.data[i] = S::from_f64(orig + h);
        let lp = loss(&x, &w, &b, &mut ws);
        x.data[i] = S::from_f64(orig - h);
        let lm = loss(&x, &w, &b, &mut ws);
        x.data[i] = S::from_f64(orig);
        tracker.record(dx.data[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    tracker.entry(name, tol)
}

fn check_rectifier<S: Scalar>(seed: u64, tol: f64, h_scale: f64) -> GradCheckEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Inputs bounded away from the kink so central differences are exact.
    let mut x: Vec<S> = (0..64)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            S::from_f64(if rng.random_bool(0.5) { v } else { -v })
        })
        .collect();
    let proj: Vec<S> = (0..64).map(|_| S::from_f64(rng.random_range(-1.0..1.0))).collect();
    let loss = |x: &[S]| -> f64 {
        let mut y = x.to_vec();
        relu(&mut y);
        y.iter().zip(&proj).map(|(a, p)| a.as_f64() * p.as_f64()).sum()
    };
    let mut y = x.clone();
    relu(&mut y);
    let mut dy: Vec<S> = proj.clone();
    relu_backward(&mut dy, &y);

    let mut tracker = ErrTracker::new();
    for i in 0..x.len() {
        let orig = x[i].as_f64();
        let h = fd_step(orig, h_scale).min(0.05); // stay on one side of the kink
        x[i] = S::from_f64(orig + h);
        let lp = loss(&x);
        x[i] = S::from_f64(orig - h);
        let lm = loss(&x);
        x[i] = S::from_f64(orig);
        tracker.record(dy[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    tracker.entry("rectifier", tol)
}

fn check_pool<S: Scalar>(seed: u64, tol: f64, h_scale: f64) -> GradCheckEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Feat::<S>::zeros(2, 2, 6, 6);
    for v in &mut x.data {
        *v = S::from_f64(rng.random_range(-1.0..1.0));
    }
    let y0 = avg_pool2_forward(&x);
    let proj: Vec<S> = (0..y0.data.len()).map(|_| S::from_f64(rng.random_range(-1.0..1.0))).collect();
    let loss = |x: &Feat<S>| -> f64 {
        let y = avg_pool2_forward(x);
        y.data.iter().zip(&proj).map(|(a, p)| a.as_f64() * p.as_f64()).sum()
    };
    let dy = Feat { c: 2, n: 2, h: 3, w: 3, data: proj.clone() };
    let dx = avg_pool2_backward(&dy, 6, 6);
    let mut tracker = ErrTracker::new();
    for i in 0..x.data.len() {
        let orig = x.data[i].as_f64();
        let h = fd_step(orig, h_scale);
        x.data[i] = S::from_f64(orig + h);
        let lp = loss(&x);
        x.data[i] = S::from_f64(orig - h);
        let lm = loss(&x);
        x.data[i] = S::from_f64(orig);
        tracker.record(dx.data[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    tracker.entry("avg_pool", tol)
}

fn check_linear<S: Scalar>(seed: u64, tol: f64, h_scale: f64) -> GradCheckEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, in_f, out_f) = (3usize, 7usize, 4usize);
    let mut x: Vec<S> = (0..n * in_f).map(|_| S::from_f64(rng.random_range(-1.0..1.0))).collect();
    let mut w: Vec<S> = (0..out_f * in_f).map(|_| S::from_f64(rng.random_range(-0.5..0.5))).collect();
    let b: Vec<S> = (0..out_f).map(|_| S::from_f64(rng.random_range(-0.2..0.2))).collect();
    let proj: Vec<S> = (0..n * out_f).map(|_| S::from_f64(rng.random_range(-1.0..1.0))).collect();
    let loss = |x: &[S], w: &[S]| -> f64 {
        let y = linear_forward(x, n, w, &b, in_f, out_f);
        y.iter().zip(&proj).map(|(a, p)| a.as_f64() * p.as_f64()).sum()
    };
    let mut dw = vec![S::zero(); w.len()];
    let mut db = vec![S::zero(); b.len()];
    let dx = linear_backward(&x, n, &w, &proj, in_f, out_f, &mut dw, &mut db);
    let mut tracker = ErrTracker::new();
    for i in 0..w.len() {
        let orig = w[i].as_f64();
        let h = fd_step(orig, h_scale);
        w[i] = S::from_f64(orig + h);
        let lp = loss(&x, &w);
        w[i] = S::from_f64(orig - h);
        let lm = loss(&x, &w);
        w[i] = S::from_f64(orig);
        tracker.record(dw[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    for i in 0..x.len() {
        let orig = x[i].as_f64();
        let h = fd_step(orig, h_scale);
        x[i] = S::from_f64(orig + h);
        let lp = loss(&x, &w);
        x[i] = S::from_f64(orig - h);
        let lm = loss(&x, &w);
        x[i] = S::from_f64(orig);
        tracker.record(dx[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    tracker.entry("linear", tol)
}

/// Loss of one fixed batch under the current parameters (training-mode
/// forward; running statistics untouched).
fn model_loss(
    model: &mut Model<f64>,
    tiles: &Tensor4<f64>,
    met: &[f64],
    labels: &[f64],
    ws: &mut Workspace<f64>,
) -> f64 {
    let (pred, _) = model.forward_cached(tiles, met, ws, false).expect("forward");
    crate::nn::loss::mse_loss(&pred, labels).expect("loss").0
}

/// f64 twin of a model: finite differences always run in f64, so the
/// comparison measures the precision of the analytic backward pass, not
/// the noise floor of an f32 difference quotient.
fn f64_twin<S: Scalar>(model: &Model<S>) -> Model<f64> {
    let params = crate::nn::params::ParamSet {
        tensors: model
            .params
            .tensors
            .iter()
            .map(|t| crate::nn::params::ParamTensor {
                desc: t.desc.clone(),
                data: t.data.iter().map(|v| v.as_f64()).collect(),
            })
            .collect(),
    };
    let norm = model.norm.as_ref().map(|ns| crate::nn::params::NormState {
        sites: ns
            .sites
            .iter()
            .map(|(m, v)| {
                (
                    m.iter().map(|x| x.as_f64()).collect(),
                    v.iter().map(|x| x.as_f64()).collect(),
                )
            })
            .collect(),
    });
    Model::from_params(&model.cfg, model.tile_size(), params, norm).expect("twin layout")
}

struct FdBatch {
    tiles: Tensor4<f64>,
    met: Vec<f64>,
    labels: Vec<f64>,
}

fn fd_batch<S: Scalar>(tiles: &Tensor4<S>, met: &[S], labels: &[S]) -> FdBatch {
    FdBatch {
        tiles: Tensor4::new(tiles.dims, tiles.data.iter().map(|v| v.as_f64()).collect()).unwrap(),
        met: met.iter().map(|v| v.as_f64()).collect(),
        labels: labels.iter().map(|v| v.as_f64()).collect(),
    }
}

/// Finite differences over a filtered, strided sample of the model's
/// parameter tensors against the analytic gradients.
#[allow(clippy::too_many_arguments)]
fn model_param_check<S: Scalar>(
    name: &str,
    model: &mut Model<S>,
    tiles: &Tensor4<S>,
    met: &[S],
    labels: &[S],
    filter: impl Fn(&str) -> bool,
    per_tensor: usize,
    tol: f64,
    h_scale: f64,
) -> GradCheckEntry {
    let mut ws = Workspace::new();
    let (pred, cache) = model.forward_cached(tiles, met, &mut ws, false).expect("forward");
    let (_, dpred) = crate::nn::loss::mse_loss(&pred, labels).expect("loss");
    let grads = model.backward(&cache, &dpred, &mut ws, false).expect("backward");

    let mut fd_model = f64_twin(model);
    let fd = fd_batch(tiles, met, labels);
    let mut fd_ws = Workspace::new();

    let mut tracker = ErrTracker::new();
    for ti in 0..fd_model.params.tensors.len() {
        if !filter(&fd_model.params.tensors[ti].desc.path) {
            continue;
        }
        let len = fd_model.params.tensors[ti].data.len();
        let step = (len / per_tensor).max(1);
        for i in (0..len).step_by(step) {
            let orig = fd_model.params.tensors[ti].data[i];
            let h = fd_step(orig, h_scale);
            fd_model.params.tensors[ti].data[i] = orig + h;
            let lp = model_loss(&mut fd_model, &fd.tiles, &fd.met, &fd.labels, &mut fd_ws);
            fd_model.params.tensors[ti].data[i] = orig - h;
            let lm = model_loss(&mut fd_model, &fd.tiles, &fd.met, &fd.labels, &mut fd_ws);
            fd_model.params.tensors[ti].data[i] = orig;
            tracker.record(grads.params.tensors[ti].data[i].as_f64(), (lp - lm) / (2.0 * h));
        }
    }
    tracker.entry(name, tol)
}

/// The met-concat boundary: gradients must reach the met inputs and the
/// tile inputs on the other side of the flatten.
fn check_met_boundary<S: Scalar>(
    model: &mut Model<S>,
    tiles: &Tensor4<S>,
    met: &[S],
    labels: &[S],
    tol: f64,
    h_scale: f64,
) -> GradCheckEntry {
    let mut ws = Workspace::new();
    let (pred, cache) = model.forward_cached(tiles, met, &mut ws, false).expect("forward");
    let (_, dpred) = crate::nn::loss::mse_loss(&pred, labels).expect("loss");
    let grads = model.backward(&cache, &dpred, &mut ws, true).expect("backward");

    let mut fd_model = f64_twin(model);
    let fd = fd_batch(tiles, met, labels);
    let mut fd_ws = Workspace::new();

    let mut tracker = ErrTracker::new();
    let mut met_var = fd.met.clone();
    for i in 0..met_var.len() {
        let orig = met_var[i];
        let h = fd_step(orig, h_scale);
        met_var[i] = orig + h;
        let lp = model_loss(&mut fd_model, &fd.tiles, &met_var, &fd.labels, &mut fd_ws);
        met_var[i] = orig - h;
        let lm = model_loss(&mut fd_model, &fd.tiles, &met_var, &fd.labels, &mut fd_ws);
        met_var[i] = orig;
        tracker.record(grads.met[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    let dinput = grads.input.as_ref().expect("input grads requested");
    let mut tiles_var = fd.tiles.clone();
    let len = tiles_var.data.len();
    let step = (len / 40).max(1);
    for i in (0..len).step_by(step) {
        let orig = tiles_var.data[i];
        let h = fd_step(orig, h_scale);
        tiles_var.data[i] = orig + h;
        let lp = model_loss(&mut fd_model, &tiles_var, &fd.met, &fd.labels, &mut fd_ws);
        tiles_var.data[i] = orig - h;
        let lm = model_loss(&mut fd_model, &tiles_var, &fd.met, &fd.labels, &mut fd_ws);
        tiles_var.data[i] = orig;
        tracker.record(dinput.data[i].as_f64(), (lp - lm) / (2.0 * h));
    }
    tracker.entry("met_concat", tol)
}

fn run_suite<S: Scalar>(cfg: &ModelConfig, seed: u64, tol: f64, h_scale: f64) -> GradCheckReport {
    let mut entries = Vec::new();
    entries.push(check_conv::<S>("conv3x3_s1", conv_shape(3, 4, 3, 1, 1, 7), seed ^ 1, tol, h_scale));
    entries.push(check_conv::<S>("conv3x3_s2", conv_shape(3, 4, 3, 2, 1, 9), seed ^ 2, tol, h_scale));
    entries.push(check_conv::<S>("conv1x1_proj", conv_shape(4, 6, 1, 2, 0, 9), seed ^ 3, tol, h_scale));
    entries.push(check_rectifier::<S>(seed ^ 4, tol, h_scale));
    entries.push(check_pool::<S>(seed ^ 5, tol, h_scale));
    entries.push(check_linear::<S>(seed ^ 6, tol, h_scale));

    // Small full model for the structural checks.
    let small = ModelConfig {
        input_channels: cfg.input_channels,
        met_inputs: cfg.met_inputs,
        stem_width: 4,
        stage_widths: vec![4, 6],
        blocks_per_stage: cfg.blocks_per_stage,
        head_hidden: 16,
        use_batchnorm: false,
        precision: cfg.precision,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
    let k = 9;
    let batch = 3;
    let mut model = Model::<S>::new(&small, k, seed ^ 8).expect("model");
    let mut tiles = Tensor4::<S>::zeros([batch, small.input_channels, k, k]);
    for v in &mut tiles.data {
        *v = S::from_f64(rng.random_range(-1.0..1.0));
    }
    let met: Vec<S> = (0..batch * small.met_inputs)
        .map(|_| S::from_f64(rng.random_range(-1.0..1.0)))
        .collect();
    let labels: Vec<S> = (0..batch).map(|_| S::from_f64(rng.random_range(-1.0..1.0))).collect();

    // Model-level finite differences always run on an f64 twin; use the
    // f64 step regardless of the suite precision.
    let fd_h = 1e-5;
    entries.push(model_param_check(
        "residual_block",
        &mut model,
        &tiles,
        &met,
        &labels,
        |p| p.starts_with("stage0.block0"),
        16,
        tol,
        fd_h,
    ));
    entries.push(check_met_boundary(&mut model, &tiles, &met, &labels, tol, fd_h));
    entries.push(model_param_check(
        "full_model",
        &mut model,
        &tiles,
        &met,
        &labels,
        |_| true,
        8,
        tol,
        fd_h,
    ));

    // Batch-norm variant of the same small model.
    let bn_cfg = ModelConfig { use_batchnorm: true, ..small };
    let mut bn_model = Model::<S>::new(&bn_cfg, k, seed ^ 9).expect("bn model");
    entries.push(model_param_check(
        "batchnorm",
        &mut bn_model,
        &tiles,
        &met,
        &labels,
        |p| p.ends_with(".gamma") || p.ends_with(".beta") || p == "stem.weight",
        8,
        tol,
        fd_h,
    ));

    GradCheckReport { entries }
}

/// Full gradient-check suite in f64 at the given tolerance.
pub fn grad_check(cfg: &ModelConfig, seed: u64, tolerance: f64) -> GradCheckReport {
    run_suite::<f64>(cfg, seed, tolerance, 1e-5)
}

/// The same suite in f32; meaningful only at the looser
/// [`TOLERANCE_F32`] threshold.
pub fn grad_check_f32(cfg: &ModelConfig, seed: u64, tolerance: f64) -> GradCheckReport {
    run_suite::<f32>(cfg, seed, tolerance, 1e-2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_in_f64() {
        let report = grad_check(&ModelConfig::default(), 1234, DEFAULT_TOLERANCE_F64);
        assert!(report.passed(), "\n{}", report.table());
    }

    #[test]
    fn rectifier_is_exact_away_from_the_kink() {
        let entry = check_rectifier::<f64>(7, 1e-6, 1e-6);
        assert!(entry.pass, "rectifier max err {}", entry.max_rel_err);
    }

    #[test]
    fn linear_layer_is_near_machine_precision() {
        let entry = check_linear::<f64>(8, 1e-6, 1e-6);
        assert!(entry.pass, "linear max err {}", entry.max_rel_err);
    }

    #[test]
    fn f32_suite_passes_at_loose_tolerance() {
        let report = grad_check_f32(&ModelConfig::default(), 99, TOLERANCE_F32);
        assert!(report.passed(), "\n{}", report.table());
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        // Negative control: a wrong analytic gradient must trip the
        // relative-error gate the suite uses.
        let analytic = 0.5;
        let wrong = analytic + 0.01;
        let numeric = 0.5000001;
        assert!(relative_error(wrong, numeric) > DEFAULT_TOLERANCE_F64);
        assert!(relative_error(analytic, numeric) < DEFAULT_TOLERANCE_F64);
    }
}
