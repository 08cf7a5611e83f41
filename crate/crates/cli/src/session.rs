//! Interactive editing state behind the slider API.
//!
//! Each session keeps the unclamped preview intermediates `I_1 … I_K`. A
//! strength change at operator `k` only invalidates `I_k` onwards, so
//! dragging the last slider re-runs a single operator.

use std::sync::atomic::{AtomicU64, Ordering};

use neurop::numerics::Tensor;
use neurop::pipeline::{downsample_long_edge, RetouchModel};
use neurop::raster;
use neurop::Result;
use serde::{Deserialize, Serialize};

/// Slider range; wider than the predictors' open interval `(−1, 1)`.
pub const STRENGTH_LIMIT: f32 = 2.0;
pub const DEFAULT_PREVIEW_EDGE: usize = 512;

#[derive(Debug, Default)]
pub struct Counters {
    recomputed_ops: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub recomputed_ops: u64,
    pub cache_hits: u64,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            recomputed_ops: self.recomputed_ops.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

pub struct Session {
    original: Tensor<f32>,
    preview_input: Tensor<f32>,
    predicted: Vec<f32>,
    strengths: Vec<f32>,
    /// Unclamped preview intermediates; only the first `valid` are current.
    cache: Vec<Tensor<f32>>,
    valid: usize,
    pub counters: Counters,
}

pub fn clamp_strength(v: f32) -> f32 {
    v.clamp(-STRENGTH_LIMIT, STRENGTH_LIMIT)
}

impl Session {
    /// Predicts strengths on the full image (the same values `infer` would
    /// use) and renders the preview.
    pub fn open(
        model: &RetouchModel<f32>,
        image: Tensor<f32>,
        preview_edge: usize,
    ) -> Result<Self> {
        raster::rgb_dims(&image)?;
        let predicted = model.retouch(&image)?.strengths;
        let preview_input = downsample_long_edge(&image, preview_edge)?;
        let mut s = Session {
            original: image,
            preview_input,
            strengths: predicted.clone(),
            predicted,
            cache: Vec::new(),
            valid: 0,
            counters: Counters::default(),
        };
        s.render(model)?;
        Ok(s)
    }

    pub fn strengths(&self) -> &[f32] {
        &self.strengths
    }

    pub fn predicted(&self) -> &[f32] {
        &self.predicted
    }

    pub fn original(&self) -> &Tensor<f32> {
        &self.original
    }

    pub fn preview_dims(&self) -> (usize, usize) {
        let s = self.preview_input.shape();
        (s[1], s[2])
    }

    /// Replaces the strengths (clamped to the slider range) and re-renders
    /// from the first operator whose strength changed. Returns the clamped values.
    pub fn set_strengths(&mut self, model: &RetouchModel<f32>, new: &[f32]) -> Result<Vec<f32>> {
        if new.len() != model.num_ops() {
            return Err(neurop::Error::InvalidArgument(format!(
                "expected {} strengths, got {}",
                model.num_ops(),
                new.len()
            )));
        }
        let new: Vec<f32> = new.iter().map(|&v| clamp_strength(v)).collect();
        let first_changed = self
            .strengths
            .iter()
            .zip(&new)
            .position(|(a, b)| a.to_bits() != b.to_bits())
            .unwrap_or(new.len());
        self.valid = self.valid.min(first_changed);
        self.strengths = new.clone();
        self.render(model)?;
        Ok(new)
    }

    fn render(&mut self, model: &RetouchModel<f32>) -> Result<()> {
        let k_ops = model.num_ops();
        self.cache.truncate(self.valid);
        self.counters
            .cache_hits
            .fetch_add(self.valid as u64, Ordering::Relaxed);
        for k in self.valid..k_ops {
            let input = if k == 0 {
                &self.preview_input
            } else {
                &self.cache[k - 1]
            };
            let next = model.apply_op(k, input, self.strengths[k])?;
            self.cache.push(next);
            self.counters.recomputed_ops.fetch_add(1, Ordering::Relaxed);
        }
        self.valid = k_ops;
        Ok(())
    }

    /// Clamped final preview.
    pub fn preview(&self) -> Tensor<f32> {
        raster::clamp01(self.cache.last().expect("rendered on open"))
    }

    /// Clamped preview of every intermediate.
    pub fn intermediate_previews(&self) -> Vec<Tensor<f32>> {
        self.cache.iter().map(raster::clamp01).collect()
    }

    /// Full-resolution render with the current strengths.
    pub fn render_full(&self, model: &RetouchModel<f32>) -> Result<Tensor<f32>> {
        model.retouch_with_strengths(&self.original, &self.strengths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use neurop::pipeline::ModelConfig;
    use rand::SeedableRng;

    fn setup() -> (RetouchModel<f32>, Tensor<f32>) {
        let model = RetouchModel::random(
            ModelConfig::default(),
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let img = Tensor::from_vec(
            &[3, 30, 40],
            (0..3600).map(|i| (i % 97) as f32 / 96.0).collect(),
        )
        .unwrap();
        (model, img)
    }

    #[test]
    fn changing_operator_k_recomputes_the_tail() {
        let (model, img) = setup();
        let mut s = Session::open(&model, img, 16).unwrap();
        assert_eq!(s.counters.snapshot().recomputed_ops, 3);
        let base = s.strengths().to_vec();
        for k in 0..3 {
            let before = s.counters.snapshot();
            let mut v = base.clone();
            v[k] += 0.25 * (k as f32 + 1.0);
            s.set_strengths(&model, &v).unwrap();
            let after = s.counters.snapshot();
            assert_eq!(after.recomputed_ops - before.recomputed_ops, (3 - k) as u64);
            assert_eq!(after.cache_hits - before.cache_hits, k as u64);
            s.set_strengths(&model, &base).unwrap();
        }
    }

    #[test]
    fn unchanged_strengths_reuse_everything() {
        let (model, img) = setup();
        let mut s = Session::open(&model, img, 16).unwrap();
        let first = s.preview();
        let before = s.counters.snapshot();
        let same = s.strengths().to_vec();
        s.set_strengths(&model, &same).unwrap();
        assert_eq!(s.counters.snapshot().recomputed_ops, before.recomputed_ops);
        assert_eq!(s.preview(), first);
    }

    #[test]
    fn preview_matches_a_fresh_replay_and_clamps() {
        let (model, img) = setup();
        let mut s = Session::open(&model, img.clone(), 16).unwrap();
        let echoed = s.set_strengths(&model, &[0.3, 5.0, -0.2]).unwrap();
        assert_eq!(echoed, vec![0.3, 2.0, -0.2]);
        s.set_strengths(&model, &[0.3, 2.0, 0.7]).unwrap();
        let small = downsample_long_edge(&img, 16).unwrap();
        assert_eq!(
            s.preview(),
            model
                .retouch_with_strengths(&small, &[0.3, 2.0, 0.7])
                .unwrap()
        );
        assert_eq!(
            s.render_full(&model).unwrap(),
            model
                .retouch_with_strengths(&img, &[0.3, 2.0, 0.7])
                .unwrap()
        );
        assert!(s.set_strengths(&model, &[0.1]).is_err());
    }
}
