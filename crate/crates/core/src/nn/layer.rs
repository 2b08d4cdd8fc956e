//! Layer kinds and their forward/backward kernels.
//!
//! Tensors are channel-major `[channels, height, width]`. Convolutions are
//! stride 1 with zero-filled same padding, so spatial extents are preserved.

use matrixmultiply::dgemm;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    /// `kernel`x`kernel` convolution, stride 1, same padding. `kernel` is odd.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    MaxPool2x2,
    /// Nearest-neighbour 2x upsampling.
    Upsample2x,
    /// Channel concatenation of two inputs with equal spatial extents.
    Concat,
    /// Linear 1x1 convolution to a single output channel.
    OutputHead { in_channels: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::Upsample2x => "upsample2x",
            LayerSpec::Concat => "concat",
            LayerSpec::OutputHead { .. } => "output-head",
        }
    }

    /// Stable numeric tag used in the model container.
    pub fn code(&self) -> u8 {
        match self {
            LayerSpec::Conv2d { .. } => 1,
            LayerSpec::Relu => 2,
            LayerSpec::MaxPool2x2 => 3,
            LayerSpec::Upsample2x => 4,
            LayerSpec::Concat => 5,
            LayerSpec::OutputHead { .. } => 6,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            LayerSpec::Concat => 2,
            _ => 1,
        }
    }

    /// `(in_channels, out_channels, kernel)` for parameterised layers.
    pub fn conv_geometry(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((in_channels, out_channels, kernel)),
            LayerSpec::OutputHead { in_channels } => Some((in_channels, 1, 1)),
            _ => None,
        }
    }

    /// Number of `(weight, bias)` scalars.
    pub fn param_sizes(&self) -> (usize, usize) {
        match self.conv_geometry() {
            Some((i, o, k)) => (o * i * k * k, o),
            None => (0, 0),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.conv_geometry().map_or(0, |(i, _, k)| i * k * k)
    }

    /// Output shape for the given input shapes; `index` only feeds diagnostics.
    pub fn output_shape(&self, index: usize, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>, actual: &[usize]| Error::ShapeMismatch {
            layer: index,
            kind: self.kind(),
            expected,
            actual: actual.to_vec(),
        };
        if inputs.len() != self.arity() {
            return Err(Error::InvalidNetwork(format!(
                "layer {index} ({}) takes {} inputs, got {}",
                self.kind(),
                self.arity(),
                inputs.len()
            )));
        }
        let first = inputs[0];
        let [c, h, w] = *first else {
            return Err(mismatch(vec![0, 0, 0], first));
        };
        match *self {
            LayerSpec::Conv2d { .. } | LayerSpec::OutputHead { .. } => {
                let (ci, co, _) = self.conv_geometry().unwrap();
                if c != ci {
                    return Err(mismatch(vec![ci, h, w], first));
                }
                Ok(vec![co, h, w])
            }
            LayerSpec::Relu => Ok(first.to_vec()),
            LayerSpec::MaxPool2x2 => {
                if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
                    return Err(mismatch(vec![c, h + h % 2, w + w % 2], first));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerSpec::Upsample2x => Ok(vec![c, 2 * h, 2 * w]),
            LayerSpec::Concat => {
                let second = inputs[1];
                match *second {
                    [c2, h2, w2] if h2 == h && w2 == w => Ok(vec![c + c2, h, w]),
                    _ => Err(mismatch(vec![second.first().copied().unwrap_or(0), h, w], second)),
                }
            }
        }
    }
}

/// Trainable parameters of one layer; empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    /// `[out, in, k, k]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Params {
    pub fn zeros_for(spec: &LayerSpec) -> Params {
        let (nw, nb) = spec.param_sizes();
        Params {
            weight: vec![0.0; nw],
            bias: vec![0.0; nb],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// How gradients pass through ReLU units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardRule {
    /// True gradient: gated by the forward activation only.
    Train,
    /// Guided: passes only where both the forward input and the incoming
    /// backward value are strictly positive.
    Guided,
}

/// Evaluate one layer. `index` only feeds diagnostics.
pub fn forward(spec: &LayerSpec, params: &Params, inputs: &[&Tensor], index: usize) -> Result<Tensor> {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let out_shape = spec.output_shape(index, &shapes)?;
    let x = inputs[0];
    let (c, h, w) = x.chw().unwrap();
    let out = match *spec {
        LayerSpec::Conv2d { .. } | LayerSpec::OutputHead { .. } => {
            let (_, co, k) = spec.conv_geometry().unwrap();
            conv_forward(x.data(), c, h, w, &params.weight, &params.bias, co, k)
        }
        LayerSpec::Relu => x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        LayerSpec::MaxPool2x2 => maxpool_forward(x.data(), c, h, w),
        LayerSpec::Upsample2x => upsample_forward(x.data(), c, h, w),
        LayerSpec::Concat => {
            let mut v = Vec::with_capacity(x.len() + inputs[1].len());
            v.extend_from_slice(x.data());
            v.extend_from_slice(inputs[1].data());
            v
        }
    };
    Tensor::from_vec(&out_shape, out)
}

/// Propagate `grad_out` back through one layer.
///
/// Returns one gradient per input. When `param_grad` is given, parameter
/// gradients are accumulated into it.
pub(crate) fn backward(
    spec: &LayerSpec,
    params: &Params,
    inputs: &[&Tensor],
    grad_out: &Tensor,
    rule: BackwardRule,
    param_grad: Option<&mut Params>,
) -> Vec<Tensor> {
    let x = inputs[0];
    let (c, h, w) = x.chw().unwrap();
    match *spec {
        LayerSpec::Conv2d { .. } | LayerSpec::OutputHead { .. } => {
            let (_, co, k) = spec.conv_geometry().unwrap();
            let gin = conv_backward(x.data(), c, h, w, &params.weight, co, k, grad_out.data(), param_grad);
            vec![Tensor::from_vec(x.shape(), gin).unwrap()]
        }
        LayerSpec::Relu => {
            let g = x
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&f, &g)| relu_backward(f, g, rule))
                .collect();
            vec![Tensor::from_vec(x.shape(), g).unwrap()]
        }
        LayerSpec::MaxPool2x2 => {
            let g = maxpool_backward(x.data(), c, h, w, grad_out.data());
            vec![Tensor::from_vec(x.shape(), g).unwrap()]
        }
        LayerSpec::Upsample2x => {
            let g = upsample_backward(grad_out.data(), c, h, w);
            vec![Tensor::from_vec(x.shape(), g).unwrap()]
        }
        LayerSpec::Concat => {
            let split = x.len();
            let (a, b) = grad_out.data().split_at(split);
            vec![
                Tensor::from_vec(x.shape(), a.to_vec()).unwrap(),
                Tensor::from_vec(inputs[1].shape(), b.to_vec()).unwrap(),
            ]
        }
    }
}

/// Gradient through a single ReLU unit with forward input `f` and incoming
/// backward value `g`.
#[inline]
pub fn relu_backward(f: f64, g: f64, rule: BackwardRule) -> f64 {
    match rule {
        BackwardRule::Train => {
            if f > 0.0 {
                g
            } else {
                0.0
            }
        }
        BackwardRule::Guided => {
            if f > 0.0 && g > 0.0 {
                g
            } else {
                0.0
            }
        }
    }
}

/// `C = A·B + beta·C` with explicit strides, `A` is `m`x`k`, `B` is `k`x`n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering every strided index of the
    // m x k, k x n and m x n operands; `c` does not alias `a` or `b`.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `[c, h, w]` into `[c*k*k, h*w]` patches, zero-filled at borders.
fn im2col(input: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = sy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[src_row + sx_lo..src_row + sx_lo + len]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add `[c*k*k, h*w]` back into `[c, h, w]`.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = sy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    let d = &mut plane[dst_row + sx_lo..dst_row + sx_lo + len];
                    for (o, s) in d.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *o += s;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
    k: usize,
) -> Vec<f64> {
    let hw = h * w;
    let ckk = c * k * k;
    let mut out = vec![0.0; out_c * hw];
    for (o, row) in out.chunks_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    let col_buf;
    let col = if k == 1 {
        input
    } else {
        col_buf = im2col(input, c, h, w, k);
        &col_buf
    };
    gemm(out_c, ckk, hw, weight, (ckk, 1), col, (hw, 1), 1.0, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_c: usize,
    k: usize,
    grad_out: &[f64],
    param_grad: Option<&mut Params>,
) -> Vec<f64> {
    let hw = h * w;
    let ckk = c * k * k;
    if let Some(pg) = param_grad {
        let col_buf;
        let col = if k == 1 {
            input
        } else {
            col_buf = im2col(input, c, h, w, k);
            &col_buf
        };
        // dW += dOut · colᵀ
        gemm(out_c, hw, ckk, grad_out, (hw, 1), col, (1, hw), 1.0, &mut pg.weight);
        for (b, row) in pg.bias.iter_mut().zip(grad_out.chunks(hw)) {
            *b += row.iter().sum::<f64>();
        }
    }
    // dCol = Wᵀ · dOut
    let mut dcol = vec![0.0; ckk * hw];
    gemm(ckk, out_c, hw, weight, (1, ckk), grad_out, (hw, 1), 0.0, &mut dcol);
    if k == 1 {
        dcol
    } else {
        col2im(&dcol, c, h, w, k)
    }
}

fn maxpool_argmax(input: &[f64], w: usize, base: usize, y: usize, x: usize) -> usize {
    let mut best = base + (2 * y) * w + 2 * x;
    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
        let i = base + (2 * y + dy) * w + 2 * x + dx;
        if input[i] > input[best] {
            best = i;
        }
    }
    best
}

fn maxpool_forward(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                out.push(input[maxpool_argmax(input, w, base, y, x)]);
            }
        }
    }
    out
}

fn maxpool_backward(input: &[f64], c: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut g = vec![0.0; c * h * w];
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                g[maxpool_argmax(input, w, base, y, x)] += grad_out[(ci * oh + y) * ow + x];
            }
        }
    }
    g
}

fn upsample_forward(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for y in 0..oh {
            let row = &input[(ci * h + y / 2) * w..(ci * h + y / 2 + 1) * w];
            for x in 0..ow {
                out.push(row[x / 2]);
            }
        }
    }
    out
}

/// `h`, `w` are the extents of the upsampling layer's input.
fn upsample_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                g[(ci * h + y / 2) * w + x / 2] += grad_out[(ci * oh + y) * ow + x];
            }
        }
    }
    g
}
