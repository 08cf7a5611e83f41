use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            // half-pixel centres, edges clamped
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resampling of `[C, H, W]` maps to a fixed output size.
///
/// A linear map, so the backward pass is its transpose; gradients can flow
/// through a downsampling step into whatever produced the input.
#[derive(Clone, Debug)]
pub struct BilinearResize {
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl BilinearResize {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Result<Self> {
        if in_hw.0 == 0 || in_hw.1 == 0 || out_hw.0 == 0 || out_hw.1 == 0 {
            return Err(Error::invalid(format!(
                "cannot resize {}x{} to {}x{}",
                in_hw.0, in_hw.1, out_hw.0, out_hw.1
            )));
        }
        Ok(BilinearResize {
            in_hw,
            out_hw,
            rows: axis_taps(in_hw.0, out_hw.0),
            cols: axis_taps(in_hw.1, out_hw.1),
        })
    }

    pub fn output_hw(&self) -> (usize, usize) {
        self.out_hw
    }

    fn check(&self, x: &Tensor<impl Scalar>, hw: (usize, usize)) -> Result<usize> {
        let (c, h, w) = x.chw()?;
        if (h, w) != hw {
            return Err(Error::shape("bilinear resize", &[c, hw.0, hw.1], x.shape()));
        }
        Ok(c)
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check(x, self.in_hw)?;
        let ((ih, iw), (oh, ow)) = (self.in_hw, self.out_hw);
        let mut out = Vec::with_capacity(c * oh * ow);
        for plane in x.data().chunks_exact(ih * iw) {
            for ry in &self.rows {
                let (wy0, wy1) = (T::from_f64_lossy(1.0 - ry.frac), T::from_f64_lossy(ry.frac));
                let top = &plane[ry.lo * iw..(ry.lo + 1) * iw];
                let bot = &plane[ry.hi * iw..(ry.hi + 1) * iw];
                for rx in &self.cols {
                    let (wx0, wx1) = (T::from_f64_lossy(1.0 - rx.frac), T::from_f64_lossy(rx.frac));
                    let t = top[rx.lo] * wx0 + top[rx.hi] * wx1;
                    let b = bot[rx.lo] * wx0 + bot[rx.hi] * wx1;
                    out.push(t * wy0 + b * wy1);
                }
            }
        }
        Tensor::from_vec(&[c, oh, ow], out)
    }

    /// Transpose of [`BilinearResize::forward`]: maps an output gradient to the input grid.
    pub fn backward<T: Scalar>(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check(grad, self.out_hw)?;
        let ((ih, iw), (oh, ow)) = (self.in_hw, self.out_hw);
        let mut dx = vec![T::zero(); c * ih * iw];
        for (gplane, dplane) in grad
            .data()
            .chunks_exact(oh * ow)
            .zip(dx.chunks_exact_mut(ih * iw))
        {
            for (oy, ry) in self.rows.iter().enumerate() {
                let (wy0, wy1) = (T::from_f64_lossy(1.0 - ry.frac), T::from_f64_lossy(ry.frac));
                for (ox, rx) in self.cols.iter().enumerate() {
                    let g = gplane[oy * ow + ox];
                    let (wx0, wx1) = (T::from_f64_lossy(1.0 - rx.frac), T::from_f64_lossy(rx.frac));
                    let gt = g * wy0;
                    let gb = g * wy1;
                    let i = ry.lo * iw;
                    let j = ry.hi * iw;
                    dplane[i + rx.lo] = dplane[i + rx.lo] + gt * wx0;
                    dplane[i + rx.hi] = dplane[i + rx.hi] + gt * wx1;
                    dplane[j + rx.lo] = dplane[j + rx.lo] + gb * wx0;
                    dplane[j + rx.hi] = dplane[j + rx.hi] + gb * wx1;
                }
            }
        }
        Tensor::from_vec(&[c, ih, iw], dx)
    }
}

/// Target size when shrinking so that the longer edge equals `target`.
/// Returns the input size unchanged when it already fits.
pub fn long_edge_size(h: usize, w: usize, target: usize) -> (usize, usize) {
    let long = h.max(w);
    if long <= target {
        return (h, w);
    }
    let scale = target as f64 / long as f64;
    let fit = |e: usize| {
        if e == long {
            target
        } else {
            ((e as f64 * scale).round() as usize).clamp(1, target)
        }
    };
    (fit(h), fit(w))
}
