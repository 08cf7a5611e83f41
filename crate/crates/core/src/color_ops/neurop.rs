use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{prefixed, FcLayer, ParamSet, Scalar, Tensor};
use crate::raster;

/// Pixels processed per batch when mapping whole images.
pub const PIXEL_CHUNK: usize = 4096;

const ENCODER_INIT_BOUND: f64 = 3.0;

/// A learned color operator `R(p, v) = D(E(p) + v·1)`.
///
/// The encoder is a single affine layer lifting RGB into an `F`-dimensional
/// feature space. A strength `v` translates the feature vector along the
/// all-ones direction, and the decoder (affine, ReLU, affine) maps it back
/// to RGB. The operator itself never clamps.
#[derive(Clone, Debug, PartialEq)]
pub struct NeurOp<T = f32> {
    pub encoder: FcLayer<T>,
    pub decoder_hidden: FcLayer<T>,
    pub decoder_out: FcLayer<T>,
}

/// Activations kept from [`NeurOp::forward_train`] for the backward pass.
#[derive(Clone, Debug)]
pub struct NeurOpCache<T> {
    h: usize,
    w: usize,
    pixels: Vec<T>,
    translated: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Scalar> NeurOp<T> {
    /// Random operator. The encoder is drawn wider than the usual fan-in
    /// bound so that feature spread is comparable to the strength offsets
    /// added during initialisation (up to ±2); the hidden decoder layer is
    /// narrowed to keep its pre-activations at the usual scale.
    pub fn random<R: Rng + ?Sized>(feature_dim: usize, rng: &mut R) -> Self {
        let f = feature_dim as f64;
        NeurOp {
            encoder: FcLayer::uniform(3, feature_dim, ENCODER_INIT_BOUND, rng),
            decoder_hidden: FcLayer::uniform(feature_dim, feature_dim, 0.5 / f.sqrt(), rng),
            decoder_out: FcLayer::random(feature_dim, 3, rng),
        }
    }

    pub fn zeros(feature_dim: usize) -> Self {
        NeurOp {
            encoder: FcLayer::zeros(3, feature_dim),
            decoder_hidden: FcLayer::zeros(feature_dim, feature_dim),
            decoder_out: FcLayer::zeros(feature_dim, 3),
        }
    }

    pub fn from_layers(
        encoder: FcLayer<T>,
        decoder_hidden: FcLayer<T>,
        decoder_out: FcLayer<T>,
    ) -> Result<Self> {
        let f = encoder.out_features();
        if encoder.in_features() != 3
            || decoder_hidden.in_features() != f
            || decoder_hidden.out_features() != f
            || decoder_out.in_features() != f
            || decoder_out.out_features() != 3
        {
            return Err(Error::invalid(format!(
                "inconsistent operator layers: encoder {:?}, hidden {:?}, out {:?}",
                encoder.weight.shape(),
                decoder_hidden.weight.shape(),
                decoder_out.weight.shape()
            )));
        }
        Ok(NeurOp {
            encoder,
            decoder_hidden,
            decoder_out,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.out_features()
    }

    /// `(3F + F) + (F² + F) + (3F + 3)`
    pub fn param_count_for(feature_dim: usize) -> usize {
        let f = feature_dim;
        (3 * f + f) + (f * f + f) + (3 * f + 3)
    }

    pub fn cast<U: Scalar>(&self) -> NeurOp<U> {
        NeurOp {
            encoder: self.encoder.cast(),
            decoder_hidden: self.decoder_hidden.cast(),
            decoder_out: self.decoder_out.cast(),
        }
    }

    /// `E(p)`
    pub fn encode(&self, p: [T; 3]) -> Vec<T> {
        let mut z = vec![T::zero(); self.feature_dim()];
        self.encoder.forward_into(&p, 1, &mut z);
        z
    }

    /// `z + v·1`, in place.
    pub fn translate(z: &mut [T], v: T) {
        z.iter_mut().for_each(|x| *x = *x + v);
    }

    /// `D(z)`
    pub fn decode(&self, z: &[T]) -> Result<[T; 3]> {
        if z.len() != self.feature_dim() {
            return Err(Error::shape("decode", &[self.feature_dim()], &[z.len()]));
        }
        let mut out = [T::zero(); 3];
        let mut hidden = vec![T::zero(); self.feature_dim()];
        self.decode_rows(z, 1, &mut hidden, &mut out);
        Ok(out)
    }

    /// Maps one RGB color. Goes through the same batched kernel as
    /// [`NeurOp::apply_image`], so results agree bit for bit.
    pub fn apply(&self, p: [T; 3], v: T) -> [T; 3] {
        let out = self.apply_pixels(&p, v);
        [out[0], out[1], out[2]]
    }

    /// Maps interleaved `[N, 3]` pixel rows.
    pub fn apply_pixels(&self, pixels: &[T], v: T) -> Vec<T> {
        let mut out = vec![T::zero(); pixels.len()];
        let mut scratch = Scratch::new(PIXEL_CHUNK.min(pixels.len() / 3), self.feature_dim());
        for (src, dst) in pixels
            .chunks(3 * PIXEL_CHUNK)
            .zip(out.chunks_mut(3 * PIXEL_CHUNK))
        {
            self.map_chunk(src, v, &mut scratch, dst);
        }
        out
    }

    /// Pixelwise application to a planar `[3, H, W]` image, data-parallel
    /// over fixed-size pixel chunks.
    pub fn apply_image(&self, img: &Tensor<T>, v: T) -> Result<Tensor<T>> {
        let (h, w) = raster::rgb_dims(img)?;
        let pixels = raster::to_pixels(img)?;
        let mut out = vec![T::zero(); pixels.len()];
        let f = self.feature_dim();
        pixels
            .par_chunks(3 * PIXEL_CHUNK)
            .zip(out.par_chunks_mut(3 * PIXEL_CHUNK))
            .for_each_init(
                || Scratch::new(PIXEL_CHUNK, f),
                |scratch, (src, dst)| self.map_chunk(src, v, scratch, dst),
            );
        raster::from_pixels(h, w, &out)
    }

    fn map_chunk(&self, src: &[T], v: T, scratch: &mut Scratch<T>, dst: &mut [T]) {
        let rows = src.len() / 3;
        let f = self.feature_dim();
        scratch.ensure(rows, f);
        let z = &mut scratch.z[..rows * f];
        self.encoder.forward_into(src, rows, z);
        Self::translate(z, v);
        self.decode_rows(z, rows, &mut scratch.h[..rows * f], dst);
    }

    fn decode_rows(&self, z: &[T], rows: usize, hidden: &mut [T], dst: &mut [T]) {
        self.decoder_hidden.forward_into(z, rows, hidden);
        hidden.iter_mut().for_each(|x| *x = x.max(T::zero()));
        self.decoder_out.forward_into(hidden, rows, dst);
    }

    /// Forward pass over a whole image keeping the activations for backprop.
    pub fn forward_train(&self, img: &Tensor<T>, v: T) -> Result<(Tensor<T>, NeurOpCache<T>)> {
        let (h, w) = raster::rgb_dims(img)?;
        let pixels = raster::to_pixels(img)?;
        let rows = h * w;
        let f = self.feature_dim();
        let mut translated = vec![T::zero(); rows * f];
        self.encoder.forward_into(&pixels, rows, &mut translated);
        Self::translate(&mut translated, v);
        let mut hidden_pre = vec![T::zero(); rows * f];
        self.decoder_hidden
            .forward_into(&translated, rows, &mut hidden_pre);
        let hidden: Vec<T> = hidden_pre.iter().map(|x| x.max(T::zero())).collect();
        let mut out = vec![T::zero(); rows * 3];
        self.decoder_out.forward_into(&hidden, rows, &mut out);
        let cache = NeurOpCache {
            h,
            w,
            pixels,
            translated,
            hidden_pre,
            hidden,
        };
        Ok((raster::from_pixels(h, w, &out)?, cache))
    }

    /// Backward pass. Accumulates parameter gradients into `grads` and returns
    /// `(∂L/∂image, ∂L/∂v)`; the image gradient is skipped unless requested.
    pub fn backward(
        &self,
        cache: &NeurOpCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut NeurOp<T>,
        want_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, T)> {
        grad_out.expect_shape("neurop grad_out", &[3, cache.h, cache.w])?;
        let rows = cache.h * cache.w;
        let f = self.feature_dim();
        let dout = raster::to_pixels(grad_out)?;
        let mut dhidden = vec![T::zero(); rows * f];
        self.decoder_out.backward_into(
            &cache.hidden,
            &dout,
            rows,
            &mut grads.decoder_out,
            Some(&mut dhidden),
        );
        for (d, &pre) in dhidden.iter_mut().zip(&cache.hidden_pre) {
            if pre <= T::zero() {
                *d = T::zero();
            }
        }
        let mut dz = vec![T::zero(); rows * f];
        self.decoder_hidden.backward_into(
            &cache.translated,
            &dhidden,
            rows,
            &mut grads.decoder_hidden,
            Some(&mut dz),
        );
        let dv = dz.iter().copied().sum::<T>();
        let dimg = if want_input_grad {
            let mut dp = vec![T::zero(); rows * 3];
            self.encoder
                .backward_into(&cache.pixels, &dz, rows, &mut grads.encoder, Some(&mut dp));
            Some(raster::from_pixels(cache.h, cache.w, &dp)?)
        } else {
            self.encoder
                .backward_into(&cache.pixels, &dz, rows, &mut grads.encoder, None);
            None
        };
        Ok((dimg, dv))
    }
}

impl<T: Scalar> ParamSet<T> for NeurOp<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        prefixed("encoder", self.encoder.named_tensors())
            .chain(prefixed(
                "decoder_hidden",
                self.decoder_hidden.named_tensors(),
            ))
            .chain(prefixed("decoder_out", self.decoder_out.named_tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder_hidden.tensors_mut());
        v.extend(self.decoder_out.tensors_mut());
        v
    }
}

struct Scratch<T> {
    z: Vec<T>,
    h: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(rows: usize, f: usize) -> Self {
        Scratch {
            z: vec![T::zero(); rows.max(1) * f],
            h: vec![T::zero(); rows.max(1) * f],
        }
    }

    fn ensure(&mut self, rows: usize, f: usize) {
        if self.z.len() < rows * f {
            self.z.resize(rows * f, T::zero());
        }
        if self.h.len() < rows * f {
            self.h.resize(rows * f, T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn op(seed: u64) -> NeurOp<f32> {
        NeurOp::random(64, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Straight-line per-pixel evaluation, independent of the batched kernel.
    fn naive(op: &NeurOp<f32>, p: [f32; 3], v: f32) -> [f64; 3] {
        let f = op.feature_dim();
        let fc = |l: &FcLayer<f32>, x: &[f64]| -> Vec<f64> {
            (0..l.out_features())
                .map(|o| {
                    l.bias.data()[o] as f64
                        + x.iter()
                            .enumerate()
                            .map(|(i, &xi)| l.weight.data()[o * l.in_features() + i] as f64 * xi)
                            .sum::<f64>()
                })
                .collect()
        };
        let mut z = fc(&op.encoder, &p.map(f64::from));
        z.iter_mut().for_each(|x| *x += v as f64);
        assert_eq!(z.len(), f);
        let h: Vec<f64> = fc(&op.decoder_hidden, &z)
            .into_iter()
            .map(|x| x.max(0.0))
            .collect();
        let o = fc(&op.decoder_out, &h);
        [o[0], o[1], o[2]]
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(NeurOp::<f32>::param_count_for(64), 4611);
        assert_eq!(op(1).param_count(), 4611);
        assert_eq!(3 * NeurOp::<f32>::param_count_for(64), 13_833);
    }

    #[test]
    fn constant_encoder_ignores_color() {
        let mut o = op(2);
        o.encoder.weight.fill(0.0);
        let a = o.apply([0.1, 0.9, 0.3], 0.4);
        let b = o.apply([0.7, 0.0, 1.0], 0.4);
        assert_eq!(a, b);
        assert_ne!(a, o.apply([0.1, 0.9, 0.3], -0.4));
    }

    #[test]
    fn single_pixel_matches_naive_loop() {
        let o = op(3);
        for (p, v) in [
            ([0.2, 0.5, 0.9], 0.3),
            ([0.0, 0.0, 0.0], -1.0),
            ([1.0, 0.4, 0.1], 0.75),
        ] {
            let got = o.apply(p, v);
            let want = naive(&o, p, v);
            for c in 0..3 {
                assert!((got[c] as f64 - want[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn image_is_pixelwise_bit_exact() {
        let o = op(4);
        let (h, w) = (37, 131); // spans more than one chunk
        let data: Vec<f32> = (0..3 * h * w)
            .map(|i| ((i * 7919) % 1000) as f32 / 999.0)
            .collect();
        let img = Tensor::from_vec(&[3, h, w], data).unwrap();
        let out = o.apply_image(&img, 0.25).unwrap();
        let n = h * w;
        for i in (0..n).step_by(97) {
            let d = img.data();
            let p = o.apply([d[i], d[n + i], d[2 * n + i]], 0.25);
            let od = out.data();
            assert_eq!([od[i], od[n + i], od[2 * n + i]], p, "pixel {i}");
        }
    }

    #[test]
    fn one_by_one_image_reduces_to_apply() {
        let o = op(5);
        let img = Tensor::from_vec(&[3, 1, 1], vec![0.3, 0.6, 0.1]).unwrap();
        let out = o.apply_image(&img, -0.2).unwrap();
        assert_eq!(out.data(), &o.apply([0.3, 0.6, 0.1], -0.2));
    }

    #[test]
    fn non_rgb_image_rejected() {
        assert!(op(6).apply_image(&Tensor::zeros(&[1, 4, 4]), 0.0).is_err());
    }

    #[test]
    fn translations_compose_in_feature_space() {
        let o = op(7);
        let (v1, v2) = (0.375f32, -0.125f32);
        let mut a = o.encode([0.2, 0.4, 0.6]);
        NeurOp::translate(&mut a, v1);
        NeurOp::translate(&mut a, v2);
        let mut b = o.encode([0.2, 0.4, 0.6]);
        NeurOp::translate(&mut b, v1 + v2);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 4.0 * f32::EPSILON * x.abs().max(1.0));
        }
    }

    #[test]
    fn decode_of_encode_matches_apply() {
        let o = op(8);
        let mut z = o.encode([0.5, 0.25, 0.75]);
        NeurOp::translate(&mut z, 0.5);
        assert_eq!(o.decode(&z).unwrap(), o.apply([0.5, 0.25, 0.75], 0.5));
        assert!(o.decode(&z[..3]).is_err());
    }

    #[test]
    fn train_forward_matches_inference() {
        let o = op(9);
        let img = Tensor::from_vec(&[3, 2, 3], (0..18).map(|i| i as f32 / 17.0).collect()).unwrap();
        let (out, _) = o.forward_train(&img, 0.6).unwrap();
        assert_eq!(out, o.apply_image(&img, 0.6).unwrap());
    }
}
