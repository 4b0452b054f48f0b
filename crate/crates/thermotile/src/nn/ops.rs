//! Layer kernels over the channel-major activation layout.
//!
//! Convolutions run as im2col plus one GEMM per layer per batch; their
//! backward passes rebuild the column buffer and accumulate parameter
//! gradients with GEMM as well. All reductions have a fixed order, so
//! results are bit-reproducible run to run.

use crate::nn::layout::ConvShape;
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Feat;

/// Scratch buffers shared across layer calls.
#[derive(Debug, Default)]
pub struct Workspace<S> {
    pub col: Vec<S>,
    pub dcol: Vec<S>,
}

impl<S: Scalar> Workspace<S> {
    pub fn new() -> Self {
        Workspace { col: Vec::new(), dcol: Vec::new() }
    }
}

/// Expand `x` into columns: row `(ic, ky, kx)`, column `(b, oy, ox)`.
fn im2col<S: Scalar>(x: &Feat<S>, shape: &ConvShape, col: &mut Vec<S>) {
    let k = shape.ksize;
    let cols = x.n * shape.out_h * shape.out_w;
    col.clear();
    col.resize(shape.in_c * k * k * cols, S::zero());
    let in_hw = x.hw();
    let (ih, iw) = (shape.in_h as isize, shape.in_w as isize);
    for ic in 0..shape.in_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ic * k + ky) * k + kx;
                let out_row = &mut col[row * cols..(row + 1) * cols];
                for b in 0..x.n {
                    let src = &x.data[(ic * x.n + b) * in_hw..(ic * x.n + b + 1) * in_hw];
                    let dst = &mut out_row[b * shape.out_h * shape.out_w..];
                    for oy in 0..shape.out_h {
                        let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                        let drow = &mut dst[oy * shape.out_w..(oy + 1) * shape.out_w];
                        if iy < 0 || iy >= ih {
                            drow.fill(S::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * shape.in_w..(iy as usize + 1) * shape.in_w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                            *d = if ix < 0 || ix >= iw { S::zero() } else { src_row[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an input-shaped tensor.
fn col2im_add<S: Scalar>(dcol: &[S], shape: &ConvShape, dx: &mut Feat<S>) {
    let k = shape.ksize;
    let cols = dx.n * shape.out_h * shape.out_w;
    let in_hw = dx.hw();
    let (ih, iw) = (shape.in_h as isize, shape.in_w as isize);
    for ic in 0..shape.in_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ic * k + ky) * k + kx;
                let src_row = &dcol[row * cols..(row + 1) * cols];
                for b in 0..dx.n {
                    let dst = &mut dx.data[(ic * dx.n + b) * in_hw..(ic * dx.n + b + 1) * in_hw];
                    let src = &src_row[b * shape.out_h * shape.out_w..];
                    for oy in 0..shape.out_h {
                        let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                        if iy < 0 || iy >= ih {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * shape.in_w..(iy as usize + 1) * shape.in_w];
                        let src_row2 = &src[oy * shape.out_w..(oy + 1) * shape.out_w];
                        for (ox, s) in src_row2.iter().enumerate() {
                            let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                            if ix >= 0 && ix < iw {
                                dst_row[ix as usize] = dst_row[ix as usize] + *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward: `y = w (*) x + bias`.
pub(crate) fn conv_forward<S: Scalar>(
    x: &Feat<S>,
    w: &[S],
    bias: &[S],
    shape: &ConvShape,
    ws: &mut Workspace<S>,
) -> Feat<S> {
    debug_assert_eq!(w.len(), shape.weight_len());
    im2col(x, shape, &mut ws.col);
    let m = shape.out_c;
    let kk = shape.in_c * shape.ksize * shape.ksize;
    let cols = x.n * shape.out_h * shape.out_w;
    let mut y = Feat::zeros(shape.out_c, x.n, shape.out_h, shape.out_w);
    unsafe {
        S::gemm(
            m,
            kk,
            cols,
            S::one(),
            w.as_ptr(),
            kk as isize,
            1,
            ws.col.as_ptr(),
            cols as isize,
            1,
            S::zero(),
            y.data.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
    for oc in 0..m {
        let b = bias[oc];
        for v in &mut y.data[oc * cols..(oc + 1) * cols] {
            *v = *v + b;
        }
    }
    y
}

/// Convolution backward. Accumulates `dw`/`db` (callers pre-zero them at
/// batch start) and, when `dx` is given, adds the input gradient into it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<S: Scalar>(
    x: &Feat<S>,
    w: &[S],
    dy: &Feat<S>,
    shape: &ConvShape,
    dw: &mut [S],
    db: &mut [S],
    mut dx: Option<&mut Feat<S>>,
    ws: &mut Workspace<S>,
) {
    let m = shape.out_c;
    let kk = shape.in_c * shape.ksize * shape.ksize;
    let cols = x.n * shape.out_h * shape.out_w;
    im2col(x, shape, &mut ws.col);

    // dw += dy @ col^T
    unsafe {
        S::gemm(
            m,
            cols,
            kk,
            S::one(),
            dy.data.as_ptr(),
            cols as isize,
            1,
            ws.col.as_ptr(),
            1,
            cols as isize,
            S::one(),
            dw.as_mut_ptr(),
            kk as isize,
            1,
        );
    }
    for oc in 0..m {
        let mut acc = S::zero();
        for v in &dy.data[oc * cols..(oc + 1) * cols] {
            acc = acc + *v;
        }
        db[oc] = db[oc] + acc;
    }

    if let Some(dx) = dx.as_deref_mut() {
        ws.dcol.clear();
        ws.dcol.resize(kk * cols, S::zero());
        // dcol = w^T @ dy
        unsafe {
            S::gemm(
                kk,
                m,
                cols,
                S::one(),
                w.as_ptr(),
                1,
                kk as isize,
                dy.data.as_ptr(),
                cols as isize,
                1,
                S::zero(),
                ws.dcol.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
        col2im_add(&ws.dcol, shape, dx);
    }
}

/// Rectifier, in place.
pub fn relu<S: Scalar>(x: &mut [S]) {
    for v in x {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Rectifier backward: zero the gradient where the cached output is zero.
pub fn relu_backward<S: Scalar>(dy: &mut [S], y: &[S]) {
    for (d, &out) in dy.iter_mut().zip(y) {
        if out <= S::zero() {
            *d = S::zero();
        }
    }
}

/// 2x2 average pooling, stride 2 (trailing odd row/col dropped).
pub(crate) fn avg_pool2_forward<S: Scalar>(x: &Feat<S>) -> Feat<S> {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Feat::zeros(x.c, x.n, oh, ow);
    let quarter = S::from_f64(0.25);
    let in_hw = x.hw();
    let out_hw = oh * ow;
    for cn in 0..x.c * x.n {
        let src = &x.data[cn * in_hw..(cn + 1) * in_hw];
        let dst = &mut y.data[cn * out_hw..(cn + 1) * out_hw];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * x.w + 2 * ox;
                let s = src[base] + src[base + 1] + src[base + x.w] + src[base + x.w + 1];
                dst[oy * ow + ox] = s * quarter;
            }
        }
    }
    y
}

/// Average-pool backward: spread each output gradient over its 2x2 cell.
pub(crate) fn avg_pool2_backward<S: Scalar>(dy: &Feat<S>, x_h: usize, x_w: usize) -> Feat<S> {
    let mut dx = Feat::zeros(dy.c, dy.n, x_h, x_w);
    let quarter = S::from_f64(0.25);
    let in_hw = x_h * x_w;
    let out_hw = dy.hw();
    for cn in 0..dy.c * dy.n {
        let src = &dy.data[cn * out_hw..(cn + 1) * out_hw];
        let dst = &mut dx.data[cn * in_hw..(cn + 1) * in_hw];
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                let g = src[oy * dy.w + ox] * quarter;
                let base = 2 * oy * x_w + 2 * ox;
                dst[base] = dst[base] + g;
                dst[base + 1] = dst[base + 1] + g;
                dst[base + x_w] = dst[base + x_w] + g;
                dst[base + x_w + 1] = dst[base + x_w + 1] + g;
            }
        }
    }
    dx
}

/// Fully connected forward over row-major `[n][in_f]`: `y = x w^T + b`.
pub fn linear_forward<S: Scalar>(x: &[S], n: usize, w: &[S], bias: &[S], in_f: usize, out_f: usize) -> Vec<S> {
    debug_assert_eq!(x.len(), n * in_f);
    let mut y = vec![S::zero(); n * out_f];
    if n == 0 {
        return y;
    }
    unsafe {
        S::gemm(
            n,
            in_f,
            out_f,
            S::one(),
            x.as_ptr(),
            in_f as isize,
            1,
            w.as_ptr(),
            1,
            in_f as isize,
            S::zero(),
            y.as_mut_ptr(),
            out_f as isize,
            1,
        );
    }
    for row in y.chunks_exact_mut(out_f) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
    y
}

/// Fully connected backward; accumulates `dw`/`db` and returns dx.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<S: Scalar>(
    x: &[S],
    n: usize,
    w: &[S],
    dy: &[S],
    in_f: usize,
    out_f: usize,
    dw: &mut [S],
    db: &mut [S],
) -> Vec<S> {
    // dw += dy^T @ x
    unsafe {
        S::gemm(
            out_f,
            n,
            in_f,
            S::one(),
            dy.as_ptr(),
            1,
            out_f as isize,
            x.as_ptr(),
            in_f as isize,
            1,
            S::one(),
            dw.as_mut_ptr(),
            in_f as isize,
            1,
        );
    }
    for row in dy.chunks_exact(out_f) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    let mut dx = vec![S::zero(); n * in_f];
    if n == 0 {
        return dx;
    }
    // dx = dy @ w
    unsafe {
        S::gemm(
            n,
            out_f,
            in_f,
            S::one(),
            dy.as_ptr(),
            out_f as isize,
            1,
            w.as_ptr(),
            in_f as isize,
            1,
            S::zero(),
            dx.as_mut_ptr(),
            in_f as isize,
            1,
        );
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;

/// Cached normalization intermediates for one batch-norm site.
#[derive(Debug, Clone)]
pub struct BnCache<S> {
    pub x_hat: Vec<S>,
    pub inv_std: Vec<S>,
}

/// Batch normalization over (batch, spatial) per channel, training mode:
/// normalizes with batch statistics and returns the cache for backward.
pub(crate) fn batchnorm_forward<S: Scalar>(
    x: &mut Feat<S>,
    gamma: &[S],
    beta: &[S],
    running: Option<&mut (Vec<S>, Vec<S>)>,
    momentum: f64,
) -> BnCache<S> {
    let hw = x.hw();
    let m = x.n * hw;
    let mut x_hat = vec![S::zero(); x.data.len()];
    let mut inv_std = vec![S::zero(); x.c];
    let mut batch_stats = Vec::with_capacity(x.c);
    for c in 0..x.c {
        let chunk = &mut x.data[c * m..(c + 1) * m];
        let mut sum = 0.0f64;
        for v in chunk.iter() {
            sum += v.as_f64();
        }
        let mean = sum / m as f64;
        let mut var = 0.0f64;
        for v in chunk.iter() {
            let d = v.as_f64() - mean;
            var += d * d;
        }
        var /= m as f64;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = S::from_f64(istd);
        batch_stats.push((mean, var));
        let (g, b) = (gamma[c], beta[c]);
        let chunk_hat = &mut x_hat[c * m..(c + 1) * m];
        for (v, h) in chunk.iter_mut().zip(chunk_hat) {
            let hat = S::from_f64((v.as_f64() - mean) * istd);
            *h = hat;
            *v = g * hat + b;
        }
    }
    if let Some((rm, rv)) = running {
        for c in 0..x.c {
            let (mean, var) = batch_stats[c];
            rm[c] = S::from_f64(rm[c].as_f64() * (1.0 - momentum) + mean * momentum);
            rv[c] = S::from_f64(rv[c].as_f64() * (1.0 - momentum) + var * momentum);
        }
    }
    BnCache { x_hat, inv_std }
}

/// Batch normalization with frozen running statistics (evaluation mode).
pub(crate) fn batchnorm_eval<S: Scalar>(x: &mut Feat<S>, gamma: &[S], beta: &[S], rm: &[S], rv: &[S]) {
    let hw = x.hw();
    let m = x.n * hw;
    for c in 0..x.c {
        let istd = S::from_f64(1.0 / (rv[c].as_f64() + BN_EPS).sqrt());
        let (mean, g, b) = (rm[c], gamma[c], beta[c]);
        for v in &mut x.data[c * m..(c + 1) * m] {
            *v = g * (*v - mean) * istd + b;
        }
    }
}

/// Batch-norm backward (training mode): accumulates dgamma/dbeta and
/// rewrites `dy` into the input gradient.
pub(crate) fn batchnorm_backward<S: Scalar>(
    dy: &mut Feat<S>,
    cache: &BnCache<S>,
    gamma: &[S],
    dgamma: &mut [S],
    dbeta: &mut [S],
) {
    let hw = dy.hw();
    let m = dy.n * hw;
    let m_f = m as f64;
    for c in 0..dy.c {
        let dchunk = &mut dy.data[c * m..(c + 1) * m];
        let hchunk = &cache.x_hat[c * m..(c + 1) * m];
        let mut sum_dy = 0.0f64;
        let mut sum_dy_h = 0.0f64;
        for (d, h) in dchunk.iter().zip(hchunk) {
            sum_dy += d.as_f64();
            sum_dy_h += d.as_f64() * h.as_f64();
        }
        dgamma[c] = dgamma[c] + S::from_f64(sum_dy_h);
        dbeta[c] = dbeta[c] + S::from_f64(sum_dy);
        let scale = gamma[c].as_f64() * cache.inv_std[c].as_f64() / m_f;
        for (d, h) in dchunk.iter_mut().zip(hchunk) {
            let v = m_f * d.as_f64() - sum_dy - h.as_f64() * sum_dy_h;
            *d = S::from_f64(scale * v);
        }
    }
}
