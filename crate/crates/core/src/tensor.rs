//! Dense row-major `f32` arrays and the handful of kernels needed to run the
//! detector graph on a CPU: convolution, max-pooling, nearest upsampling,
//! channel concatenation and inference-time batch normalization.
//!
//! Feature maps use the `H×W×C` layout, convolution weights `K×K×Cin×Cout`.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} has {expected} elements but {actual} values were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("{op}: expected rank {expected}, got shape {actual:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        actual: Vec<usize>,
    },
    #[error("{op}: mismatch on axis `{axis}`: {left} vs {right}")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op}: kernel size {kernel} must be odd")]
    EvenKernel { op: &'static str, kernel: usize },
    #[error("{op}: kernel {kernel} larger than padded input extent {extent}")]
    KernelTooLarge {
        op: &'static str,
        kernel: usize,
        extent: usize,
    },
    #[error("{op}: stride must be positive")]
    ZeroStride { op: &'static str },
    #[error("{0}: empty input list")]
    Empty(&'static str),
    #[error("channel range {start}..{end} out of bounds for {channels} channels")]
    ChannelRange { start: usize, end: usize, channels: usize },
    #[error("batch norm: {0}")]
    BatchNorm(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense tensor with explicit shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![value; len])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, (0..len).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(H, W, C)` of a rank-3 feature map.
    pub fn hwc(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                actual: self.shape.clone(),
            }),
        }
    }

    /// Value at `(y, x, c)` of a rank-3 tensor. Panics when out of range.
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    /// Element-wise map, keeping the shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a·self + b·other`, used for residual joins and linearity checks.
    pub fn axpby(&self, a: f32, other: &Tensor, b: f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(TensorError::AxisMismatch {
                op: "axpby",
                axis: "shape",
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.axpby(1.0, other, 1.0)
    }

    /// Channels `start..end` of a feature map.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let (h, w, c) = self.hwc("slice_channels")?;
        if start >= end || end > c {
            return Err(TensorError::ChannelRange {
                start,
                end,
                channels: c,
            });
        }
        let mut data = Vec::with_capacity(h * w * (end - start));
        for px in self.data.chunks_exact(c) {
            data.extend_from_slice(&px[start..end]);
        }
        Tensor::new(vec![h, w, end - start], data)
    }
}

/// Per-channel inference-time batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNormParams {
    pub fn new(gamma: Vec<f32>, beta: Vec<f32>, mean: Vec<f32>, var: Vec<f32>, eps: f32) -> Result<Self> {
        let n = gamma.len();
        if beta.len() != n || mean.len() != n || var.len() != n {
            return Err(TensorError::BatchNorm(format!(
                "parameter lengths differ: gamma {n}, beta {}, mean {}, var {}",
                beta.len(),
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(TensorError::BatchNorm("variance must be >= 0".into()));
        }
        if eps.is_nan() || eps < 0.0 {
            return Err(TensorError::BatchNorm("eps must be >= 0".into()));
        }
        Ok(Self {
            gamma,
            beta,
            mean,
            var,
            eps,
        })
    }

    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize, eps: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

fn check_stride(op: &'static str, stride: usize) -> Result<()> {
    if stride == 0 {
        Err(TensorError::ZeroStride { op })
    } else {
        Ok(())
    }
}

/// 2-D convolution without bias. Zero padding on all four sides.
pub fn conv2d(input: &Tensor, weights: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    const OP: &str = "conv2d";
    check_stride(OP, stride)?;
    let (h, w, cin) = input.hwc(OP)?;
    let (k, kw, wcin, cout) = match weights.shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(TensorError::Rank {
                op: OP,
                expected: 4,
                actual: weights.shape.clone(),
            })
        }
    };
    if k != kw {
        return Err(TensorError::AxisMismatch {
            op: OP,
            axis: "kernel height/width",
            left: k,
            right: kw,
        });
    }
    if k % 2 == 0 {
        return Err(TensorError::EvenKernel { op: OP, kernel: k });
    }
    if wcin != cin {
        return Err(TensorError::AxisMismatch {
            op: OP,
            axis: "input channels",
            left: cin,
            right: wcin,
        });
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if ph < k || pw < k {
        return Err(TensorError::KernelTooLarge {
            op: OP,
            kernel: k,
            extent: ph.min(pw),
        });
    }
    let oh = (ph - k) / stride + 1;
    let ow = (pw - k) / stride + 1;
    let mut out = vec![0.0f32; oh * ow * cout];
    let x = &input.data;
    let wt = &weights.data;

    out.par_chunks_mut(ow * cout).enumerate().for_each(|(oy, row)| {
        for ox in 0..ow {
            let acc = &mut row[ox * cout..(ox + 1) * cout];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &x[(iy as usize * w + ix as usize) * cin..][..cin];
                    let kbase = (ky * k + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let wrow = &wt[kbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![oh, ow, cout], out)
}

/// Max pooling with `-inf` padding. Even kernels are accepted here; callers
/// that need a centred window (SPP) validate oddness themselves.
pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    const OP: &str = "maxpool2d";
    check_stride(OP, stride)?;
    let (h, w, c) = input.hwc(OP)?;
    if kernel == 0 {
        return Err(TensorError::KernelTooLarge {
            op: OP,
            kernel,
            extent: 0,
        });
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if ph < kernel || pw < kernel {
        return Err(TensorError::KernelTooLarge {
            op: OP,
            kernel,
            extent: ph.min(pw),
        });
    }
    let oh = (ph - kernel) / stride + 1;
    let ow = (pw - kernel) / stride + 1;
    let mut out = vec![f32::NEG_INFINITY; oh * ow * c];
    out.par_chunks_mut(ow * c).enumerate().for_each(|(oy, row)| {
        for ox in 0..ow {
            let acc = &mut row[ox * c..(ox + 1) * c];
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &input.data[(iy as usize * w + ix as usize) * c..][..c];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        if v > *a {
                            *a = v;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![oh, ow, c], out)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.hwc("upsample2x")?;
    let mut data = Vec::with_capacity(4 * h * w * c);
    for y in 0..2 * h {
        for x in 0..2 * w {
            let src = ((y / 2) * w + x / 2) * c;
            data.extend_from_slice(&input.data[src..src + c]);
        }
    }
    Tensor::new(vec![2 * h, 2 * w, c], data)
}

/// Stack feature maps along the channel axis, in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    const OP: &str = "concat_channels";
    let first = inputs.first().ok_or(TensorError::Empty(OP))?;
    let (h, w, _) = first.hwc(OP)?;
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let (th, tw, tc) = t.hwc(OP)?;
        if th != h {
            return Err(TensorError::AxisMismatch {
                op: OP,
                axis: "height",
                left: h,
                right: th,
            });
        }
        if tw != w {
            return Err(TensorError::AxisMismatch {
                op: OP,
                axis: "width",
                left: w,
                right: tw,
            });
        }
        channels.push(tc);
    }
    let total: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(h * w * total);
    for p in 0..h * w {
        for (t, &tc) in inputs.iter().zip(&channels) {
            data.extend_from_slice(&t.data[p * tc..(p + 1) * tc]);
        }
    }
    Tensor::new(vec![h, w, total], data)
}

pub fn batchnorm_apply(input: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let (h, w, c) = input.hwc("batchnorm_apply")?;
    if params.channels() != c {
        return Err(TensorError::AxisMismatch {
            op: "batchnorm_apply",
            axis: "channels",
            left: c,
            right: params.channels(),
        });
    }
    let (scale, shift): (Vec<f32>, Vec<f32>) = (0..c)
        .map(|i| {
            let s = params.gamma[i] / (params.var[i] + params.eps).sqrt();
            (s, params.beta[i] - s * params.mean[i])
        })
        .unzip();
    let mut data = input.data.clone();
    for px in data.chunks_exact_mut(c) {
        for ((v, &s), &b) in px.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * s + b;
        }
    }
    Tensor::new(vec![h, w, c], data)
}
