#![allow(dead_code)]

use std::path::Path;

use neurop::data::{save_image, BitDepth};
use neurop::numerics::Tensor;
use neurop::pipeline::{ModelConfig, RetouchModel};
use neurop::weights::{save_weights, WeightsMeta};
use rand::SeedableRng;

pub fn random_model(seed: u64) -> RetouchModel<f32> {
    RetouchModel::random(
        ModelConfig::default(),
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn eye(rows: usize, cols: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[rows, cols]);
    for i in 0..3 {
        t.data_mut()[i * cols + i] = 1.0;
    }
    t
}

/// A model whose operators pass pixels through unchanged and whose
/// predictors output strength 0.
pub fn identity_model() -> RetouchModel<f32> {
    let mut m = random_model(0);
    let f = m.config.feature_dim;
    for op in &mut m.neurops {
        op.encoder.weight = eye(f, 3);
        op.decoder_hidden.weight = eye(f, f);
        op.decoder_out.weight = eye(3, f);
        for b in [
            &mut op.encoder.bias,
            &mut op.decoder_hidden.bias,
            &mut op.decoder_out.bias,
        ] {
            b.fill(0.0);
        }
    }
    for h in &mut m.predictor.heads {
        h.weight.fill(0.0);
        h.bias.fill(0.0);
    }
    m
}

pub fn write_weights(path: &Path, model: &RetouchModel<f32>) {
    save_weights(path, model, &WeightsMeta::default(), None).unwrap();
}

/// Smooth 8-bit-representable test image.
pub fn test_image(h: usize, w: usize, seed: usize) -> Tensor<f32> {
    let n = h * w;
    let data = (0..3 * n)
        .map(|i| {
            let (c, p) = (i / n, i % n);
            let (y, x) = (p / w, p % w);
            (((x * 5 + y * 3 + c * 40 + seed * 17) % 256) as f32) / 255.0
        })
        .collect();
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

pub fn write_png(path: &Path, img: &Tensor<f32>) {
    save_image(path, img, BitDepth::Eight).unwrap();
}
