//! Classic layers on feature-major batches (batch index last).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

pub(crate) fn batch_size(x: &Tensor) -> Result<usize> {
    match x.shape().last() {
        Some(&b) if x.rank() >= 2 && b > 0 => Ok(b),
        _ => Err(shape_err!("expected a [.., batch] tensor, got {:?}", x.shape())),
    }
}

fn he_normal<R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let std = libm::sqrt(2.0 / fan_in as f64);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// Fully connected layer `y = W·x + b` with `W: [N_y, N_x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weight.rank() != 2 || weight.shape()[0] != bias.len() {
            return Err(shape_err!(
                "dense weight {:?} does not match bias of length {}",
                weight.shape(),
                bias.len()
            ));
        }
        Ok(DenseLayer { weight, bias })
    }

    /// He-normal weights, zero bias.
    pub fn init_with_rng<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = Tensor::new(vec![outputs, inputs], he_normal(rng, inputs * outputs, inputs)).expect("shape");
        DenseLayer { weight, bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = batch_size(x)?;
        let (ny, nx) = (self.outputs(), self.inputs());
        if x.len() != nx * b {
            return Err(shape_err!("dense layer expects {} features, input is {:?}", nx, x.shape()));
        }
        let mut y = vec![0.0; ny * b];
        for (row, &bias) in y.chunks_exact_mut(b).zip(&self.bias) {
            row.fill(bias);
        }
        gemm(ny, nx, b, 1.0, self.weight.data(), nx, 1, x.data(), b, 1, 1.0, &mut y, b, 1);
        Tensor::new(vec![ny, b], y)
    }

    /// Returns `(dW, db, dx)`; `dx` has the shape of `x`.
    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<(Tensor, Vec<f64>, Tensor)> {
        let b = batch_size(x)?;
        let (ny, nx) = (self.outputs(), self.inputs());
        if x.len() != nx * b || grad_y.shape() != [ny, b] {
            return Err(shape_err!(
                "dense backward got x {:?}, grad_y {:?}",
                x.shape(),
                grad_y.shape()
            ));
        }
        let g = grad_y.data();
        let mut dw = vec![0.0; ny * nx];
        gemm(ny, b, nx, 1.0, g, b, 1, x.data(), 1, b, 0.0, &mut dw, nx, 1);
        let db = g.chunks_exact(b).map(|row| row.iter().sum()).collect();
        let mut dx = vec![0.0; nx * b];
        gemm(nx, ny, b, 1.0, self.weight.data(), 1, nx, g, b, 1, 0.0, &mut dx, b, 1);
        Ok((Tensor::new(vec![ny, nx], dw)?, db, Tensor::new(x.shape().to_vec(), dx)?))
    }
}

/// Spatial padding policy for [`Conv2dLayer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding so the output is `ceil(H/stride) × ceil(W/stride)`.
    Same,
}

/// 2-D cross-correlation on `[C_in, H, W, B]` with kernels `[C_out, C_in, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub kernels: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: Padding,
}

/// Resolved convolution geometry for one input size.
#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

fn pad_for(size: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = size.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(size);
    (total / 2, total)
}

impl Conv2dLayer {
    pub fn new(kernels: Tensor, bias: Vec<f64>, stride: usize, padding: Padding) -> Result<Self> {
        if kernels.rank() != 4 || kernels.shape()[0] != bias.len() || stride == 0 {
            return Err(shape_err!(
                "conv kernels {:?} with bias of length {} and stride {}",
                kernels.shape(),
                bias.len(),
                stride
            ));
        }
        Ok(Conv2dLayer { kernels, bias, stride, padding })
    }

    /// He-normal kernels (`fan_in = C_in·kh·kw`), zero bias.
    pub fn init_with_rng<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        let kernels =
            Tensor::new(vec![c_out, c_in, kernel.0, kernel.1], he_normal(rng, c_out * fan_in, fan_in)).expect("shape");
        Conv2dLayer { kernels, bias: vec![0.0; c_out], stride, padding }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    fn geometry(&self, c: usize, h: usize, w: usize) -> Result<ConvGeometry> {
        let ks = self.kernels.shape();
        let (c_out, c_in, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        let _ = c_out;
        if c != c_in {
            return Err(shape_err!("conv expects {} input channels, got {}", c_in, c));
        }
        let ((pad_top, pad_h), (pad_left, pad_w)) = match self.padding {
            Padding::Valid => ((0, 0), (0, 0)),
            Padding::Same => (pad_for(h, kh, self.stride), pad_for(w, kw, self.stride)),
        };
        if kh > h + pad_h || kw > w + pad_w {
            return Err(shape_err!(
                "kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + pad_h,
                w + pad_w
            ));
        }
        let out_h = (h + pad_h - kh) / self.stride + 1;
        let out_w = (w + pad_w - kw) / self.stride + 1;
        Ok(ConvGeometry { c_in, h, w, kh, kw, pad_top, pad_left, out_h, out_w })
    }

    /// `[C_out, H', W']` for an input `[C_in, H, W]`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 {
            return Err(shape_err!("conv input must be [C, H, W], got {:?}", input));
        }
        let g = self.geometry(input[0], input[1], input[2])?;
        Ok(vec![self.out_channels(), g.out_h, g.out_w])
    }

    fn checked_geometry(&self, x: &Tensor) -> Result<(ConvGeometry, usize)> {
        let b = batch_size(x)?;
        if x.rank() != 4 {
            return Err(shape_err!("conv input must be [C, H, W, B], got {:?}", x.shape()));
        }
        let s = x.shape();
        Ok((self.geometry(s[0], s[1], s[2])?, b))
    }

    /// Patch matrix `[(c, ky, kx), (oy, ox, b)]`; out-of-bounds taps are zero.
    fn im2col(&self, x: &Tensor, g: &ConvGeometry, b: usize) -> Vec<f64> {
        let cols = g.out_h * g.out_w * b;
        let mut out = vec![0.0; g.c_in * g.kh * g.kw * cols];
        let src = x.data();
        for c in 0..g.c_in {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = ((c * g.kh + ky) * g.kw + kx) * cols;
                    for oy in 0..g.out_h {
                        let iy = (oy * self.stride + ky) as isize - g.pad_top as isize;
                        if iy < 0 || iy as usize >= g.h {
                            continue;
                        }
                        for ox in 0..g.out_w {
                            let ix = (ox * self.stride + kx) as isize - g.pad_left as isize;
                            if ix < 0 || ix as usize >= g.w {
                                continue;
                            }
                            let from = ((c * g.h + iy as usize) * g.w + ix as usize) * b;
                            let to = row + (oy * g.out_w + ox) * b;
                            out[to..to + b].copy_from_slice(&src[from..from + b]);
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im(&self, cols_grad: &[f64], g: &ConvGeometry, b: usize) -> Vec<f64> {
        let cols = g.out_h * g.out_w * b;
        let mut dx = vec![0.0; g.c_in * g.h * g.w * b];
        for c in 0..g.c_in {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = ((c * g.kh + ky) * g.kw + kx) * cols;
                    for oy in 0..g.out_h {
                        let iy = (oy * self.stride + ky) as isize - g.pad_top as isize;
                        if iy < 0 || iy as usize >= g.h {
                            continue;
                        }
                        for ox in 0..g.out_w {
                            let ix = (ox * self.stride + kx) as isize - g.pad_left as isize;
                            if ix < 0 || ix as usize >= g.w {
                                continue;
                            }
                            let to = ((c * g.h + iy as usize) * g.w + ix as usize) * b;
                            let from = row + (oy * g.out_w + ox) * b;
                            for (d, s) in dx[to..to + b].iter_mut().zip(&cols_grad[from..from + b]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that also returns the patch matrix for [`Conv2dLayer::backward_cached`].
    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (g, b) = self.checked_geometry(x)?;
        let cols = self.im2col(x, &g, b);
        let c_out = self.out_channels();
        let k = g.c_in * g.kh * g.kw;
        let n = g.out_h * g.out_w * b;
        let mut y = vec![0.0; c_out * n];
        for (row, &bias) in y.chunks_exact_mut(n).zip(&self.bias) {
            row.fill(bias);
        }
        gemm(c_out, k, n, 1.0, self.kernels.data(), k, 1, &cols, n, 1, 1.0, &mut y, n, 1);
        Ok((Tensor::new(vec![c_out, g.out_h, g.out_w, b], y)?, cols))
    }

    /// Returns `(kernel_grads, bias_grads, input_grad)`.
    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<(Tensor, Vec<f64>, Tensor)> {
        let (_, cols) = self.forward_cached(x)?;
        self.backward_cached(x.shape(), &cols, grad_y)
    }

    pub fn backward_cached(
        &self,
        input_shape: &[usize],
        cols: &[f64],
        grad_y: &Tensor,
    ) -> Result<(Tensor, Vec<f64>, Tensor)> {
        let (g, b) = self.checked_backward(input_shape, grad_y)?;
        let c_out = self.out_channels();
        let (dk, db) = self.param_grads(&g, b, cols, grad_y.data());
        let k = g.c_in * g.kh * g.kw;
        let n = g.out_h * g.out_w * b;
        let mut dcols = vec![0.0; k * n];
        gemm(k, c_out, n, 1.0, self.kernels.data(), 1, k, grad_y.data(), n, 1, 0.0, &mut dcols, n, 1);
        let dx = self.col2im(&dcols, &g, b);
        Ok((dk, db, Tensor::new(input_shape.to_vec(), dx)?))
    }

    /// Kernel and bias gradients only, for a layer whose input needs no gradient.
    pub fn backward_params_cached(
        &self,
        input_shape: &[usize],
        cols: &[f64],
        grad_y: &Tensor,
    ) -> Result<(Tensor, Vec<f64>)> {
        let (g, b) = self.checked_backward(input_shape, grad_y)?;
        Ok(self.param_grads(&g, b, cols, grad_y.data()))
    }

    fn param_grads(&self, g: &ConvGeometry, b: usize, cols: &[f64], gy: &[f64]) -> (Tensor, Vec<f64>) {
        let c_out = self.out_channels();
        let k = g.c_in * g.kh * g.kw;
        let n = g.out_h * g.out_w * b;
        let mut dk = vec![0.0; c_out * k];
        gemm(c_out, n, k, 1.0, gy, n, 1, cols, 1, n, 0.0, &mut dk, k, 1);
        let db = gy.chunks_exact(n).map(|row| row.iter().sum()).collect();
        (Tensor::new(self.kernels.shape().to_vec(), dk).expect("kernel shape"), db)
    }

    fn checked_backward(&self, input_shape: &[usize], grad_y: &Tensor) -> Result<(ConvGeometry, usize)> {
        if input_shape.len() != 4 {
            return Err(shape_err!("conv input must be [C, H, W, B], got {:?}", input_shape));
        }
        let b = input_shape[3];
        let g = self.geometry(input_shape[0], input_shape[1], input_shape[2])?;
        let c_out = self.out_channels();
        if grad_y.shape() != [c_out, g.out_h, g.out_w, b] {
            return Err(shape_err!(
                "conv grad_y has shape {:?}, expected {:?}",
                grad_y.shape(),
                [c_out, g.out_h, g.out_w, b]
            ));
        }
        Ok((g, b))
    }
}

/// Max pooling over `[C, H, W, B]`. Trailing rows/columns that do not fill a
/// window are dropped. Ties go to the first position in row-major window order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl MaxPool2d {
    pub fn new(kh: usize, kw: usize, stride: usize) -> Self {
        MaxPool2d { kh, kw, stride }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[1] < self.kh || input[2] < self.kw || self.stride == 0 {
            return Err(shape_err!("cannot pool {:?} with a {}x{} window", input, self.kh, self.kw));
        }
        Ok(vec![
            input[0],
            (input[1] - self.kh) / self.stride + 1,
            (input[2] - self.kw) / self.stride + 1,
        ])
    }

    /// Pooled output plus the flat input index each output element came from.
    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let b = batch_size(x)?;
        if x.rank() != 4 {
            return Err(shape_err!("pool input must be [C, H, W, B], got {:?}", x.shape()));
        }
        let s = x.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let out = self.output_shape(&[c, h, w])?;
        let (oh, ow) = (out[1], out[2]);
        let src = x.data();
        let mut y = vec![0.0; c * oh * ow * b];
        let mut arg = vec![0usize; y.len()];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    for bb in 0..b {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = usize::MAX;
                        for ky in 0..self.kh {
                            for kx in 0..self.kw {
                                let iy = oy * self.stride + ky;
                                let ix = ox * self.stride + kx;
                                let at = ((ch * h + iy) * w + ix) * b + bb;
                                if best_at == usize::MAX || src[at] > best {
                                    best = src[at];
                                    best_at = at;
                                }
                            }
                        }
                        let o = ((ch * oh + oy) * ow + ox) * b + bb;
                        y[o] = best;
                        arg[o] = best_at;
                    }
                }
            }
        }
        Ok((Tensor::new(vec![c, oh, ow, b], y)?, arg))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Routes each upstream gradient to its recorded argmax.
    pub fn backward_cached(&self, input_shape: &[usize], argmax: &[usize], grad_y: &Tensor) -> Result<Tensor> {
        if grad_y.len() != argmax.len() {
            return Err(shape_err!(
                "pool grad_y has {} elements, forward produced {}",
                grad_y.len(),
                argmax.len()
            ));
        }
        let mut dx = Tensor::zeros(input_shape);
        let d = dx.data_mut();
        for (&at, &g) in argmax.iter().zip(grad_y.data()) {
            d[at] += g;
        }
        Ok(dx)
    }

    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<Tensor> {
        let (_, arg) = self.forward_cached(x)?;
        self.backward_cached(x.shape(), &arg, grad_y)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient of ReLU at input `x`; the derivative at 0 is taken as 0.
pub fn relu_backward(x: &Tensor, grad_y: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_y.shape() {
        return Err(shape_err!("relu grad {:?} vs input {:?}", grad_y.shape(), x.shape()));
    }
    let data = x.data().iter().zip(grad_y.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Column-wise softmax of a `[C, B]` tensor, shifted by the column maximum.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let b = batch_size(x)?;
    let c = x.len() / b;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for col in 0..b {
        let max = (0..c).map(|r| src[r * b + col]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in 0..c {
            let e = libm::exp(src[r * b + col] - max);
            out[r * b + col] = e;
            sum += e;
        }
        for r in 0..c {
            out[r * b + col] /= sum;
        }
    }
    Tensor::new(vec![c, b], out)
}

/// Softmax Jacobian-vector product given the forward output `y`.
pub fn softmax_backward(y: &Tensor, grad_y: &Tensor) -> Result<Tensor> {
    if y.shape() != grad_y.shape() {
        return Err(shape_err!("softmax grad {:?} vs output {:?}", grad_y.shape(), y.shape()));
    }
    let b = batch_size(y)?;
    let c = y.len() / b;
    let (yd, gd) = (y.data(), grad_y.data());
    let mut out = vec![0.0; yd.len()];
    for col in 0..b {
        let dot: f64 = (0..c).map(|r| yd[r * b + col] * gd[r * b + col]).sum();
        for r in 0..c {
            out[r * b + col] = yd[r * b + col] * (gd[r * b + col] - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}
