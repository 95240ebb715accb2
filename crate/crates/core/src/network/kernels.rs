//! Slice-level forward and backward kernels for dense layers and 1D
//! convolutions over `[C, H, W]` activations.

use super::NeuronGroup;

pub(crate) fn dense_forward(input: &[f64], groups: &[NeuronGroup]) -> Vec<f64> {
    groups
        .iter()
        .map(|g| {
            let mut acc = g.bias;
            for (w, x) in g.weights.data().iter().zip(input) {
                acc += w * x;
            }
            acc
        })
        .collect()
}

pub(crate) fn dense_backward(
    input: &[f64],
    groups: &[NeuronGroup],
    grad_out: &[f64],
    grad_groups: &mut [NeuronGroup],
    mut grad_in: Option<&mut [f64]>,
) {
    for ((g, gg), &go) in groups.iter().zip(grad_groups.iter_mut()).zip(grad_out) {
        if go == 0.0 {
            continue;
        }
        gg.bias += go;
        for (gw, x) in gg.weights.data_mut().iter_mut().zip(input) {
            *gw += go * x;
        }
        if let Some(gi) = grad_in.as_deref_mut() {
            for (gi, w) in gi.iter_mut().zip(g.weights.data()) {
                *gi += go * w;
            }
        }
    }
}

/// Geometry of a 1D convolution applied along one spatial axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvAxis {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub vertical: bool,
    pub oh: usize,
    pub ow: usize,
}

impl ConvAxis {
    pub(crate) fn new(in_shape: &[usize], out_shape: &[usize], kernel: usize, stride: usize, padding: usize, vertical: bool) -> Self {
        ConvAxis {
            c: in_shape[0],
            h: in_shape[1],
            w: in_shape[2],
            kernel,
            stride,
            padding,
            vertical,
            oh: out_shape[1],
            ow: out_shape[2],
        }
    }

    /// Flat offset within one input channel read by tap `k` at output
    /// `(oy, ox)`, or `None` when it falls in the zero padding.
    #[inline]
    fn tap(&self, oy: usize, ox: usize, k: usize) -> Option<usize> {
        if self.vertical {
            let y = (oy * self.stride + k) as isize - self.padding as isize;
            (y >= 0 && (y as usize) < self.h).then(|| y as usize * self.w + ox)
        } else {
            let x = (ox * self.stride + k) as isize - self.padding as isize;
            (x >= 0 && (x as usize) < self.w).then(|| oy * self.w + x as usize)
        }
    }
}

pub(crate) fn conv_forward(input: &[f64], geom: &ConvAxis, groups: &[NeuronGroup]) -> Vec<f64> {
    let plane = geom.h * geom.w;
    let mut out = Vec::with_capacity(groups.len() * geom.oh * geom.ow);
    for g in groups {
        let weights = g.weights.data();
        for oy in 0..geom.oh {
            for ox in 0..geom.ow {
                let mut acc = g.bias;
                for c in 0..geom.c {
                    for k in 0..geom.kernel {
                        if let Some(off) = geom.tap(oy, ox, k) {
                            acc += weights[c * geom.kernel + k] * input[c * plane + off];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub(crate) fn conv_backward(
    input: &[f64],
    geom: &ConvAxis,
    groups: &[NeuronGroup],
    grad_out: &[f64],
    grad_groups: &mut [NeuronGroup],
    mut grad_in: Option<&mut [f64]>,
) {
    let plane = geom.h * geom.w;
    let out_plane = geom.oh * geom.ow;
    for (f, (g, gg)) in groups.iter().zip(grad_groups.iter_mut()).enumerate() {
        let weights = g.weights.data();
        for oy in 0..geom.oh {
            for ox in 0..geom.ow {
                let go = grad_out[f * out_plane + oy * geom.ow + ox];
                if go == 0.0 {
                    continue;
                }
                gg.bias += go;
                let gw = gg.weights.data_mut();
                for c in 0..geom.c {
                    for k in 0..geom.kernel {
                        if let Some(off) = geom.tap(oy, ox, k) {
                            gw[c * geom.kernel + k] += go * input[c * plane + off];
                            if let Some(gi) = grad_in.as_deref_mut() {
                                gi[c * plane + off] += go * weights[c * geom.kernel + k];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub(crate) fn relu_mask(grad: &mut [f64], output: &[f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
