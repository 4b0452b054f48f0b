//! Tensor containers: the public NCHW batch tensor and the internal
//! channel-major activation layout.

use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;

/// Batch tensor in `[batch, channels, height, width]` order with an
/// optional gradient buffer of the same shape.
#[derive(Debug, Clone)]
pub struct Tensor4<S> {
    pub dims: [usize; 4],
    pub data: Vec<S>,
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn new(dims: [usize; 4], data: Vec<S>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::dimension(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Tensor4 { dims, data, grad: None })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![S::zero(); dims.iter().product()],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    /// Attach a zeroed gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![S::zero(); self.data.len()]);
        self
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> S {
        let [_, cs, hs, ws] = self.dims;
        self.data[((b * cs + c) * hs + h) * ws + w]
    }
}

/// Internal activation layout: `[channels][batch][spatial]`, so one GEMM
/// per layer covers the whole batch.
#[derive(Debug, Clone)]
pub(crate) struct Feat<S> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Feat<S> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Feat { c, n, h, w, data: vec![S::zero(); c * n * h * w] }
    }

    #[inline]
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Import a public NCHW tensor.
    pub fn from_tensor(t: &Tensor4<S>) -> Self {
        let [n, c, h, w] = t.dims;
        let hw = h * w;
        let mut f = Feat::zeros(c, n, h, w);
        for b in 0..n {
            for ch in 0..c {
                let src = &t.data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let dst = &mut f.data[(ch * n + b) * hw..(ch * n + b + 1) * hw];
                dst.copy_from_slice(src);
            }
        }
        f
    }

    /// Export to the public NCHW layout.
    pub fn to_tensor(&self) -> Tensor4<S> {
        let hw = self.hw();
        let mut t = Tensor4::zeros([self.n, self.c, self.h, self.w]);
        for b in 0..self.n {
            for ch in 0..self.c {
                let src = &self.data[(ch * self.n + b) * hw..(ch * self.n + b + 1) * hw];
                let dst = &mut t.data[(b * self.c + ch) * hw..(b * self.c + ch + 1) * hw];
                dst.copy_from_slice(src);
            }
        }
        t
    }
}
