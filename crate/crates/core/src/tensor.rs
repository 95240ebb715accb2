//! Dense row-major `f64` tensors and the handful of kernels the network needs.
//!
//! Every public constructor and operation rejects non-finite results, so a
//! `Tensor` that exists always holds finite values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Sum of squares in ascending index order, then a square root.
pub fn norm2(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
}

/// Sum of absolute values in ascending index order.
pub fn norm1(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v.abs())
}

/// Output length of a 1D convolution over `len` samples.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Self::checked(shape, data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    /// A 1D tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    fn checked(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    // Internal constructor for kernels that already guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn l2_norm(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Domain("l2_norm of an empty tensor".into()));
        }
        Ok(norm2(&self.data))
    }

    pub fn l1_norm(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Domain("l1_norm of an empty tensor".into()));
        }
        Ok(norm1(&self.data))
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::checked(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        Self::checked(self.shape.clone(), self.data.iter().map(|v| v * c).collect())
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape.as_slice(), other.shape.as_slice()) else {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        };
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                for j in 0..n {
                    out[i * n + j] += a * other.data[p * n + j];
                }
            }
        }
        Self::checked(vec![m, n], out)
    }

    /// Cross-correlation of a 1D signal with a 1D kernel, zero padded on both
    /// ends by `padding` samples.
    pub fn conv1d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        if self.shape.len() != 1 || kernel.shape.len() != 1 {
            return Err(Error::shape("conv1d", &self.shape, &kernel.shape));
        }
        let n = self.data.len();
        let d = kernel.data.len();
        let out_len = conv_out_len(n, d, stride, padding)
            .ok_or_else(|| Error::shape("conv1d", &self.shape, &kernel.shape))?;
        let out = (0..out_len)
            .map(|o| {
                let mut acc = 0.0;
                for (k, w) in kernel.data.iter().enumerate() {
                    let pos = (o * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < n {
                        acc += w * self.data[pos as usize];
                    }
                }
                acc
            })
            .collect();
        Self::checked(vec![out_len], out)
    }

    /// Channel-wise 2D max pooling over a `[C, H, W]` tensor with a square window.
    pub fn max_pool2d(&self, size: usize, stride: usize) -> Result<Tensor> {
        let &[c, h, w] = self.shape.as_slice() else {
            return Err(Error::shape("max_pool2d", &self.shape, &[size, size]));
        };
        let (Some(oh), Some(ow)) = (conv_out_len(h, size, stride, 0), conv_out_len(w, size, stride, 0)) else {
            return Err(Error::shape("max_pool2d", &self.shape, &[size, size]));
        };
        let (out, _) = max_pool2d_raw(&self.data, c, h, w, size, stride, oh, ow);
        Ok(Tensor::from_parts(vec![c, oh, ow], out))
    }
}

/// Max pooling on raw `[C, H, W]` storage; also returns the flat argmax of each
/// window (first maximum wins) for the backward pass.
#[allow(clippy::too_many_arguments)]
pub(crate) fn max_pool2d_raw(
    data: &[f64],
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}
