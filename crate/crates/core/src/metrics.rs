//! Image quality metrics: PSNR, SSIM and CIE76 ΔE*ab.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

fn check(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    let dims = a.chw()?;
    b.expect_shape("metric operands", a.shape())?;
    if a.is_empty() {
        return Err(Error::invalid("metrics need a non-empty image"));
    }
    Ok(dims)
}

/// `10·log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn grey(img: &Tensor<f32>, c: usize, n: usize) -> Vec<f64> {
    let d = img.data();
    (0..n)
        .map(|i| (0..c).map(|ci| d[ci * n + i] as f64).sum::<f64>() / c as f64)
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|x| x / s).collect()
}

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM of the channel-mean grey images over all valid 11×11 Gaussian
/// windows. Images smaller than the window use global statistics instead.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    let (c, h, w) = check(a, b)?;
    let (x, y) = (grey(a, c, h * w), grey(b, c, h * w));
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = (h * w) as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cov = x
            .iter()
            .zip(&y)
            .map(|(p, q)| (p - mx) * (q - my))
            .sum::<f64>()
            / n;
        return Ok(ssim_from_moments(mx, my, vx, vy, cov));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=h - SSIM_WINDOW {
        for left in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, gy) in g.iter().enumerate() {
                for (dx, gx) in g.iter().enumerate() {
                    let wt = gy * gx;
                    let i = (top + dy) * w + left + dx;
                    mx += wt * x[i];
                    my += wt * y[i];
                    xx += wt * x[i] * x[i];
                    yy += wt * y[i] * y[i];
                    xy += wt * (x[i] * y[i]);
                }
            }
            total += ssim_from_moments(mx, my, xx - mx * mx, yy - my * my, xy - mx * my);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// D65 white as the image of sRGB white, so that white maps to `L* = 100`.
fn white() -> [f64; 3] {
    SRGB_TO_XYZ.map(|row| row.iter().sum())
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t.powi(3)
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|row| row[0] * v[0] + row[1] * v[1] + row[2] * v[2])
}

pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mat(&SRGB_TO_XYZ, rgb.map(srgb_to_linear));
    let wp = white();
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / wp[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let wp = white();
    let xyz = [fx, fy, fz].map(lab_f_inv);
    let xyz = [xyz[0] * wp[0], xyz[1] * wp[1], xyz[2] * wp[2]];
    mat(&XYZ_TO_SRGB, xyz).map(linear_to_srgb)
}

/// Mean per-pixel CIE76 distance in Lab.
pub fn delta_e(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    let (c, h, w) = check(a, b)?;
    if c != 3 {
        return Err(Error::invalid(format!(
            "delta E needs RGB images, got {c} channels"
        )));
    }
    let n = h * w;
    let (da, db) = (a.data(), b.data());
    let px = |d: &[f32], i: usize| [0, 1, 2].map(|ci| d[ci * n + i] as f64);
    let total: f64 = (0..n)
        .map(|i| {
            let (la, lb) = (srgb_to_lab(px(da, i)), srgb_to_lab(px(db, i)));
            ((la[0] - lb[0]).powi(2) + (la[1] - lb[1]).powi(2) + (la[2] - lb[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub delta_e: f64,
}

pub fn evaluate(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<Metrics> {
    Ok(Metrics {
        psnr: psnr(pred, target)?,
        ssim: ssim(pred, target)?,
        delta_e: delta_e(pred, target)?,
    })
}

/// Mean of each metric over a set of evaluations.
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    let n = all.len().max(1) as f64;
    Metrics {
        psnr: all.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: all.iter().map(|m| m.ssim).sum::<f64>() / n,
        delta_e: all.iter().map(|m| m.delta_e).sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f32, h: usize, w: usize) -> Tensor<f32> {
        Tensor::full(&[3, h, w], v)
    }

    #[test]
    fn psnr_cases() {
        let a = constant(0.2, 4, 4);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        // 0.25 and 0.75 are exact in binary, so the MSE is exactly 0.25
        let q = psnr(&constant(0.25, 4, 4), &constant(0.75, 4, 4)).unwrap();
        assert!((q - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert_eq!(
            psnr(&constant(0.0, 3, 3), &constant(1.0, 3, 3)).unwrap(),
            0.0
        );
    }

    #[test]
    fn ssim_identical_and_symmetric() {
        let a = Tensor::from_vec(
            &[3, 16, 16],
            (0..768).map(|i| ((i * 37) % 101) as f32 / 100.0).collect(),
        )
        .unwrap();
        let b = a.map(|x| (x * 0.8 + 0.05).min(1.0));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ssim_constant_shift_on_single_window() {
        // one 11×11 window of constants: variances vanish, only the mean term remains
        let (x, y) = (0.4f64, 0.5f64);
        let c1 = 0.01f64.powi(2);
        let expected = (2.0 * x * y + c1) / (x * x + y * y + c1);
        let got = ssim(&constant(0.4, 11, 11), &constant(0.5, 11, 11)).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn lab_reference_points() {
        let w = srgb_to_lab([1.0; 3]);
        assert!((w[0] - 100.0).abs() < 1e-9 && w[1].abs() < 1e-9 && w[2].abs() < 1e-9);
        assert_eq!(srgb_to_lab([0.0; 3]), [0.0, 0.0, 0.0]);
        let back = lab_to_srgb(srgb_to_lab([0.2, 0.5, 0.9]));
        for (a, b) in back.iter().zip([0.2, 0.5, 0.9]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_e_black_white() {
        let d = delta_e(&constant(0.0, 2, 2), &constant(1.0, 2, 2)).unwrap();
        assert!((d - 100.0).abs() < 1e-9);
        let a = constant(0.3, 2, 2);
        assert_eq!(delta_e(&a, &a).unwrap(), 0.0);
    }
}
