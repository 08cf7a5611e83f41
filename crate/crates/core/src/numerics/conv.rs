use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, MatRef, Scalar, Tensor};

/// 2D cross-correlation with zero padding on a single `[C, H, W]` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    /// `[out_channels, in_channels, k, k]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

/// Output extent of a convolution along one axis, `None` when the kernel
/// does not fit into the padded input.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvLayer {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    /// Uniform in `±1/sqrt(in·k·k)`.
    pub fn random<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
        for b in layer.bias.data_mut() {
            *b = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// `(H', W')` for an `H × W` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        match (
            conv_output_size(h, k, self.stride, self.padding),
            conv_output_size(w, k, self.stride, self.padding),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::invalid(format!(
                "kernel {k}x{k} does not fit a {h}x{w} input padded by {}",
                self.padding
            ))),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let (c, h, w) = x.chw()?;
        if c != self.in_channels() {
            return Err(Error::shape(
                "conv input channels",
                &[self.in_channels(), h, w],
                x.shape(),
            ));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((h, w, oh, ow))
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let (c, k) = (self.in_channels(), self.kernel());
        let p = oh * ow;
        let mut cols = vec![T::zero(); c * k * k * p];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * p;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let (c, k) = (self.in_channels(), self.kernel());
        let p = oh * ow;
        let mut x = vec![T::zero(); c * h * w];
        for ci in 0..c {
            let plane = &mut x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * p;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                let d = &mut plane[iy as usize * w + ix as usize];
                                *d = *d + g;
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w, oh, ow) = self.check_input(x)?;
        let cols = self.im2col(x.data(), h, w, oh, ow);
        self.forward_cols(&cols, oh, ow)
    }

    fn forward_cols(&self, cols: &[T], oh: usize, ow: usize) -> Result<Tensor<T>> {
        let (o, p) = (self.out_channels(), oh * ow);
        let ckk = self.weight.len() / o;
        let mut y = vec![T::zero(); o * p];
        for (row, &b) in y.chunks_exact_mut(p).zip(self.bias.data()) {
            row.iter_mut().for_each(|v| *v = b);
        }
        gemm(
            MatRef::new(self.weight.data(), o, ckk),
            MatRef::new(cols, ckk, p),
            &mut y,
            true,
        );
        Tensor::from_vec(&[o, oh, ow], y)
    }

    /// Backward pass. Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut ConvLayer<T>,
    ) -> Result<Tensor<T>> {
        let (h, w, oh, ow) = self.check_input(x)?;
        let o = self.out_channels();
        grad_out.expect_shape("conv grad_out", &[o, oh, ow])?;
        grads
            .weight
            .expect_shape("conv grads", self.weight.shape())?;
        let p = oh * ow;
        let ckk = self.weight.len() / o;
        let cols = self.im2col(x.data(), h, w, oh, ow);
        let dy = grad_out.data();
        gemm(
            MatRef::new(dy, o, p),
            MatRef::new(&cols, ckk, p).t(),
            grads.weight.data_mut(),
            true,
        );
        for (b, row) in grads.bias.data_mut().iter_mut().zip(dy.chunks_exact(p)) {
            *b = *b + row.iter().copied().sum::<T>();
        }
        let mut dcols = vec![T::zero(); ckk * p];
        gemm(
            MatRef::new(self.weight.data(), o, ckk).t(),
            MatRef::new(dy, o, p),
            &mut dcols,
            false,
        );
        Tensor::from_vec(x.shape(), self.col2im(&dcols, h, w, oh, ow))
    }
}
