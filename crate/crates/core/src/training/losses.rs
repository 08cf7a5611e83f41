//! Reconstruction, total-variation and color losses with their gradients.
//!
//! Values are accumulated in `f64` regardless of the tensor precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

const COLOR_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossTerms {
    pub reconstruction: bool,
    pub tv: bool,
    pub color: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            reconstruction: true,
            tv: true,
            color: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_tv: f64,
    pub lambda_color: f64,
    pub terms: LossTerms,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_tv: 0.1,
            lambda_color: 0.1,
            terms: LossTerms::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tv >= 0.0 && self.lambda_color >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    /// `L_r + λ_tv·L_tv + λ_c·L_c` over the enabled terms.
    pub fn combine(&self, reconstruction: f64, tv: f64, color: f64) -> f64 {
        let mut total = 0.0;
        if self.terms.reconstruction {
            total += reconstruction;
        }
        if self.terms.tv {
            total += self.lambda_tv * tv;
        }
        if self.terms.color {
            total += self.lambda_color * color;
        }
        total
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub tv: f64,
    pub color: f64,
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let dims = a.chw()?;
    b.expect_shape("loss operands", a.shape())?;
    Ok(dims)
}

/// Per-pixel weights from a binary human-region mask: `hrp_weight` inside,
/// 1 outside. The mask is `[1, H, W]` or `[H, W]` with values in `[0, 1]`.
pub fn hrp_weights<T: Scalar>(mask: &Tensor<T>, hrp_weight: f64) -> Tensor<T> {
    let half = T::from_f64_lossy(0.5);
    let inside = T::from_f64_lossy(hrp_weight);
    let hw: Vec<usize> = mask.shape().iter().rev().take(2).rev().copied().collect();
    Tensor::from_vec(
        &hw,
        mask.data()
            .iter()
            .map(|&m| if m >= half { inside } else { T::one() })
            .collect(),
    )
    .expect("mask dims")
}

fn recon_impl<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: Option<&Tensor<T>>,
    want_grad: bool,
) -> Result<(f64, Option<Tensor<T>>)> {
    let (c, h, w) = same_shape(pred, target)?;
    let n = h * w;
    if let Some(wm) = weights {
        if wm.len() != n {
            return Err(Error::shape("reconstruction weights", &[h, w], wm.shape()));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |wm| wm.data()[i % n].as_f64());
    let wsum: f64 = weights.map_or(n as f64, |wm| wm.data().iter().map(|x| x.as_f64()).sum());
    let denom = c as f64 * wsum;
    if denom <= 0.0 {
        return Err(Error::invalid("reconstruction loss over an empty image"));
    }
    let mut acc = 0.0;
    let mut grad = want_grad.then(|| vec![T::zero(); pred.len()]);
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let d = p.as_f64() - t.as_f64();
        let wi = weight(i);
        acc += wi * d.abs();
        if let Some(g) = grad.as_mut() {
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            g[i] = T::from_f64_lossy(s * wi / denom);
        }
    }
    let grad = grad
        .map(|g| Tensor::from_vec(pred.shape(), g))
        .transpose()?;
    Ok((acc / denom, grad))
}

/// Mean absolute error, optionally weighted per pixel and normalised by `C·Σw`.
pub fn loss_reconstruction<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: Option<&Tensor<T>>,
) -> Result<f64> {
    Ok(recon_impl(pred, target, weights, false)?.0)
}

pub fn loss_reconstruction_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: Option<&Tensor<T>>,
) -> Result<(f64, Tensor<T>)> {
    let (v, g) = recon_impl(pred, target, weights, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn tv_impl<T: Scalar>(img: &Tensor<T>, want_grad: bool) -> Result<(f64, Option<Tensor<T>>)> {
    let (c, h, w) = img.chw()?;
    let d = img.data();
    let at = |ci: usize, y: usize, x: usize| d[(ci * h + y) * w + x].as_f64();
    let mut sum_sq = 0.0;
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = at(ci, y, x);
                if x + 1 < w {
                    sum_sq += (at(ci, y, x + 1) - v).powi(2);
                }
                if y + 1 < h {
                    sum_sq += (at(ci, y + 1, x) - v).powi(2);
                }
            }
        }
    }
    let chw = (c * h * w) as f64;
    let norm = sum_sq.sqrt();
    let value = norm / chw;
    if !want_grad {
        return Ok((value, None));
    }
    let mut grad = vec![0.0f64; d.len()];
    if norm > 0.0 {
        let scale = 1.0 / (norm * chw);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = (ci * h + y) * w + x;
                    let v = at(ci, y, x);
                    if x + 1 < w {
                        let dx = at(ci, y, x + 1) - v;
                        grad[i] -= dx * scale;
                        grad[i + 1] += dx * scale;
                    }
                    if y + 1 < h {
                        let dy = at(ci, y + 1, x) - v;
                        grad[i] -= dy * scale;
                        grad[i + w] += dy * scale;
                    }
                }
            }
        }
    }
    Ok((value, Some(Tensor::from_f64(img.shape(), &grad)?)))
}

/// `‖∇I‖₂ / (C·H·W)` with forward differences; the difference past the last
/// row or column is zero, so `1×N` images only see the horizontal term.
pub fn loss_tv<T: Scalar>(img: &Tensor<T>) -> Result<f64> {
    Ok(tv_impl(img, false)?.0)
}

pub fn loss_tv_grad<T: Scalar>(img: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (v, g) = tv_impl(img, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn color_impl<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    want_grad: bool,
) -> Result<(f64, Option<Tensor<T>>)> {
    let (c, h, w) = same_shape(pred, target)?;
    let n = h * w;
    if n == 0 {
        return Err(Error::invalid("color loss over an empty image"));
    }
    let (pd, td) = (pred.data(), target.data());
    let mut cos_sum = 0.0;
    let mut grad = want_grad.then(|| vec![0.0f64; pd.len()]);
    let mut a = vec![0.0; c];
    let mut b = vec![0.0; c];
    for i in 0..n {
        for ci in 0..c {
            a[ci] = pd[ci * n + i].as_f64();
            b[ci] = td[ci * n + i].as_f64();
        }
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na < COLOR_EPS && nb < COLOR_EPS {
            cos_sum += 1.0;
            continue;
        }
        let (ma, mb) = (na.max(COLOR_EPS), nb.max(COLOR_EPS));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cos = dot / (ma * mb);
        cos_sum += cos;
        if let Some(g) = grad.as_mut() {
            // d(1 − mean cos)/da = −(1/n)·(b/(ma·mb) − [na > eps]·cos·a/na²)
            for ci in 0..c {
                let mut dc = b[ci] / (ma * mb);
                if na >= COLOR_EPS {
                    dc -= cos * a[ci] / (na * na);
                }
                g[ci * n + i] = -dc / n as f64;
            }
        }
    }
    let grad = grad
        .map(|g| Tensor::from_f64(pred.shape(), &g))
        .transpose()?;
    Ok((1.0 - cos_sum / n as f64, grad))
}

/// `1 − mean cos∠(p_pred, p_target)` over pixels; pixels where both colors
/// are (near) black count as perfectly aligned.
pub fn loss_color<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(color_impl(pred, target, false)?.0)
}

pub fn loss_color_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    let (v, g) = color_impl(pred, target, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// Weighted sum of the enabled terms.
pub fn loss_total<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: &LossWeights,
    pixel_weights: Option<&Tensor<T>>,
) -> Result<LossBreakdown> {
    same_shape(pred, target)?;
    let terms = weights.terms;
    let mut b = LossBreakdown::default();
    if terms.reconstruction {
        b.reconstruction = loss_reconstruction(pred, target, pixel_weights)?;
    }
    if terms.tv {
        b.tv = loss_tv(pred)?;
    }
    if terms.color {
        b.color = loss_color(pred, target)?;
    }
    b.total = weights.combine(b.reconstruction, b.tv, b.color);
    Ok(b)
}

pub fn loss_total_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: &LossWeights,
    pixel_weights: Option<&Tensor<T>>,
) -> Result<(LossBreakdown, Tensor<T>)> {
    same_shape(pred, target)?;
    let terms = weights.terms;
    let mut b = LossBreakdown::default();
    let mut grad = Tensor::zeros(pred.shape());
    let mut add = |g: &Tensor<T>, scale: f64| {
        let s = T::from_f64_lossy(scale);
        for (acc, &x) in grad.data_mut().iter_mut().zip(g.data()) {
            *acc = *acc + s * x;
        }
    };
    if terms.reconstruction {
        let (v, g) = loss_reconstruction_grad(pred, target, pixel_weights)?;
        b.reconstruction = v;
        add(&g, 1.0);
    }
    if terms.tv {
        let (v, g) = loss_tv_grad(pred)?;
        b.tv = v;
        add(&g, weights.lambda_tv);
    }
    if terms.color {
        let (v, g) = loss_color_grad(pred, target)?;
        b.color = v;
        add(&g, weights.lambda_color);
    }
    b.total = weights.combine(b.reconstruction, b.tv, b.color);
    Ok((b, grad))
}
