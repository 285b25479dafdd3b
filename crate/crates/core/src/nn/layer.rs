//! Layer kinds and their forward/backward kernels.
//!
//! Every kernel works on a single sample. Image activations are laid out as
//! `[channels, height, width]`; fully-connected layers flatten their input.

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Input {
        shape: Vec<usize>,
    },
    /// Dense 2-D convolution. Weights are `[filters, in_channels, k, k]`
    /// followed by one bias per filter.
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// `y = W x + b` on the flattened input, `W` stored `[out_dim, in_dim]`.
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
    },
    EltwiseSum,
    /// Selects horizontal stripe `index` of `stripes` equal stripes.
    StripeSplit {
        stripes: usize,
        index: usize,
    },
    Concat {
        axis: usize,
    },
}

impl LayerKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Relu => "relu",
            LayerKind::FullyConnected { .. } => "fully-connected",
            LayerKind::EltwiseSum => "eltwise-sum",
            LayerKind::StripeSplit { .. } => "stripe-split",
            LayerKind::Concat { .. } => "concat",
        }
    }

    /// Number of weight and bias entries owned by the layer.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                filters,
                kernel,
                ..
            } => (filters * in_channels * kernel * kernel, filters),
            LayerKind::FullyConnected { in_dim, out_dim } => (out_dim * in_dim, out_dim),
            _ => (0, 0),
        }
    }
}

pub(crate) fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

pub(crate) fn pool_out_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (input >= kernel).then(|| (input - kernel) / stride + 1)
}

pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Input offset read by tap `(c, ky, kx)` at each output position, or
    /// [`PADDED`] where the tap falls in the padding. Row-major over taps,
    /// then output positions.
    pub fn taps(&self) -> Vec<usize> {
        let p = self.out_h * self.out_w;
        let mut idx = Vec::with_capacity(self.in_c * self.k * self.k * p);
        for c in 0..self.in_c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            let inside = iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.in_h
                                && (ix as usize) < self.in_w;
                            idx.push(if inside {
                                (c * self.in_h + iy as usize) * self.in_w + ix as usize
                            } else {
                                PADDED
                            });
                        }
                    }
                }
            }
        }
        idx
    }
}

pub(crate) const PADDED: usize = usize::MAX;

fn columns(taps: &[usize], input: &[f64]) -> Vec<f64> {
    taps.iter()
        .map(|&t| if t == PADDED { 0.0 } else { input[t] })
        .collect()
}

/// Each output starts at its bias and accumulates taps in (channel, ky, kx)
/// order.
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    index: &[usize],
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let p = g.out_h * g.out_w;
    let taps = g.in_c * g.k * g.k;
    let cols = columns(index, input);
    let mut out = vec![0.0; g.out_c * p];
    for f in 0..g.out_c {
        let of = &mut out[f * p..(f + 1) * p];
        of.fill(bias[f]);
        for (w, col) in weights[f * taps..(f + 1) * taps]
            .iter()
            .zip(cols.chunks_exact(p))
        {
            for (o, x) in of.iter_mut().zip(col) {
                *o += w * x;
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients into `grad_w`/`grad_b` and returns the
/// gradient with respect to the input.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    index: &[usize],
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let p = g.out_h * g.out_w;
    let taps = g.in_c * g.k * g.k;
    let cols = columns(index, input);
    let mut grad_cols = vec![0.0; taps * p];
    for f in 0..g.out_c {
        let gf = &grad_out[f * p..(f + 1) * p];
        grad_b[f] += gf.iter().sum::<f64>();
        let wf = &weights[f * taps..(f + 1) * taps];
        let gwf = &mut grad_w[f * taps..(f + 1) * taps];
        for (r, (col, gcol)) in cols
            .chunks_exact(p)
            .zip(grad_cols.chunks_exact_mut(p))
            .enumerate()
        {
            gwf[r] += gf.iter().zip(col).map(|(a, b)| a * b).sum::<f64>();
            let w = wf[r];
            for (gc, go) in gcol.iter_mut().zip(gf) {
                *gc += w * go;
            }
        }
    }
    let mut grad_in = vec![0.0; g.in_c * g.in_h * g.in_w];
    for (&t, gc) in index.iter().zip(&grad_cols) {
        if t != PADDED {
            grad_in[t] += gc;
        }
    }
    grad_in
}

/// Max pooling over `[c, h, w]`. Returns the pooled values and, for each
/// output cell, the flat input index it was taken from. Ties go to the
/// lowest flat index.
pub(crate) fn maxpool_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    (out_h, out_w): (usize, usize),
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut argmax = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = ch * h * w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best_idx = plane + oy * stride * w + ox * stride;
                let mut best = input[best_idx];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = plane + (oy * stride + ky) * w + ox * stride + kx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; input_len];
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        grad_in[idx] += g;
    }
    grad_in
}

pub(crate) fn fc_forward(input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let in_dim = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weights[o * in_dim..(o + 1) * in_dim];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

pub(crate) fn fc_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let in_dim = input.len();
    let mut grad_in = vec![0.0; in_dim];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad_b[o] += g;
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad_w[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] += g * input[i];
            grad_in[i] += g * row[i];
        }
    }
    grad_in
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn concat_forward(inputs: &[&Tensor], axis: usize, out_shape: &[usize]) -> Vec<f64> {
    let (outer, _, inner) = axis_split(out_shape, axis);
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for t in inputs {
            let (_, len, _) = axis_split(t.shape(), axis);
            let chunk = len * inner;
            out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

pub(crate) fn concat_backward(
    grad_out: &[f64],
    axis: usize,
    input_shapes: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let (outer, _, inner) = axis_split(&input_shapes[0], axis);
    let mut grads: Vec<Vec<f64>> = input_shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (shape, g) in input_shapes.iter().zip(grads.iter_mut()) {
            let chunk = shape[axis] * inner;
            g.extend_from_slice(&grad_out[pos..pos + chunk]);
            pos += chunk;
        }
    }
    grads
}

pub(crate) fn stripe_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    stripes: usize,
    index: usize,
) -> Vec<f64> {
    let sh = h / stripes;
    let mut out = Vec::with_capacity(c * sh * w);
    for ch in 0..c {
        let start = (ch * h + index * sh) * w;
        out.extend_from_slice(&input[start..start + sh * w]);
    }
    out
}

pub(crate) fn stripe_backward(
    grad_out: &[f64],
    (c, h, w): (usize, usize, usize),
    stripes: usize,
    index: usize,
) -> Vec<f64> {
    let sh = h / stripes;
    let mut grad_in = vec![0.0; c * h * w];
    for ch in 0..c {
        let start = (ch * h + index * sh) * w;
        grad_in[start..start + sh * w].copy_from_slice(&grad_out[ch * sh * w..(ch + 1) * sh * w]);
    }
    grad_in
}
