//! Procedural images and retouching pairs for tests, demos and desk-scale training.
//!
//! Sources are smooth color fields (a two-color gradient plus a few soft
//! blobs) degraded by a random exposure drop, black lift and desaturation.
//! Targets undo the damage with the surrogate operators, using strengths
//! read off simple image statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color_ops::StandardOpKind;
use crate::error::Result;
use crate::numerics::Tensor;
use crate::raster;

/// Luminance percentile treated as the image's black floor.
const BLACK_PERCENTILE: f64 = 0.02;
/// Share of that floor removed by the clipping step.
const BLACK_REMOVAL: f64 = 0.5;
const TARGET_MEAN_LUMA: f64 = 0.45;
const TARGET_SATURATION: f64 = 0.3;

pub fn smooth_image<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Tensor<f32> {
    let c0: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let blobs: Vec<([f32; 3], f32, f32, f32)> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.3),
            )
        })
        .collect();
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((x as f32 + 0.5) / w as f32, (y as f32 + 0.5) / h as f32);
            let t = (((u - 0.5) * dx + (v - 0.5) * dy) + 0.5).clamp(0.0, 1.0);
            let mut p: [f32; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t);
            for (color, bx, by, r) in &blobs {
                let d2 = (u - bx).powi(2) + (v - by).powi(2);
                let a = (-d2 / (2.0 * r * r)).exp() * 0.8;
                for c in 0..3 {
                    p[c] += (color[c] - p[c]) * a;
                }
            }
            for c in 0..3 {
                data[(c * h + y) * w + x] = p[c].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("sized above")
}

/// Random dull, dark or washed-out variant of a clean image.
pub fn degrade<R: Rng + ?Sized>(img: &Tensor<f32>, rng: &mut R) -> Result<Tensor<f32>> {
    let gain = rng.random_range(-1.6f32..0.4).exp2();
    let lift = rng.random_range(0.0f32..0.12);
    let desat = rng.random_range(0.0f32..0.7);
    let (h, w) = raster::rgb_dims(img)?;
    let px = raster::to_pixels(img)?;
    let mut out = Vec::with_capacity(px.len());
    for p in px.chunks_exact(3) {
        let grey = (p[0] + p[1] + p[2]) / 3.0;
        for &c in p {
            let c = c + (grey - c) * desat;
            out.push((lift + (1.0 - lift) * c * gain).clamp(0.0, 1.0));
        }
    }
    raster::from_pixels(h, w, &out)
}

fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((values.len() - 1) as f64 * q).round() as usize;
    values[idx]
}

fn mean_saturation(img: &Tensor<f32>) -> Result<f64> {
    let px = raster::to_pixels(img)?;
    let n = px.len() / 3;
    let s: f64 = px
        .chunks_exact(3)
        .map(|p| (p[0].max(p[1]).max(p[2]) - p[0].min(p[1]).min(p[2])) as f64)
        .sum();
    Ok(s / n.max(1) as f64)
}

/// Applies black clipping, exposure and vibrance in turn, each strength
/// chosen from statistics of the image entering that step. Returns the
/// target and the strengths used.
pub fn auto_retouch(img: &Tensor<f32>) -> Result<(Tensor<f32>, [f32; 3])> {
    let luma = raster::luminance(img)?;
    let black = percentile(luma, BLACK_PERCENTILE);
    let vb = (BLACK_REMOVAL * black / crate::color_ops::BLACK_POINT_SCALE as f64).clamp(-1.0, 1.0)
        as f32;
    let step1 = StandardOpKind::BlackClipping.apply(img, vb)?;

    let luma = raster::luminance(&step1)?;
    let mean = (luma.iter().sum::<f64>() / luma.len() as f64).max(1e-3);
    let stops = (TARGET_MEAN_LUMA / mean).log2();
    let ve = (stops / crate::color_ops::EXPOSURE_STOPS as f64).clamp(-1.0, 1.0) as f32;
    let step2 = StandardOpKind::Exposure.apply(&step1, ve)?;

    let sat = mean_saturation(&step2)?;
    let vv = (2.0 * (TARGET_SATURATION - sat)).clamp(-1.0, 1.0) as f32;
    let step3 = StandardOpKind::Vibrance.apply(&step2, vv)?;
    Ok((step3, [vb, ve, vv]))
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub id: String,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub strengths: [f32; 3],
}

/// `count` pairs of `size × size` images, reproducible from `seed`.
pub fn synthetic_pairs(count: usize, size: usize, seed: u64) -> Result<Vec<SyntheticPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let clean = smooth_image(size, size, &mut rng);
            let input = degrade(&clean, &mut rng)?;
            let (target, strengths) = auto_retouch(&input)?;
            Ok(SyntheticPair {
                id: format!("synth_{i:04}"),
                input,
                target,
                strengths,
            })
        })
        .collect()
}

/// Plain smooth images, e.g. as initialisation sources.
pub fn synthetic_images(count: usize, size: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| smooth_image(size, size, &mut rng))
        .collect()
}
