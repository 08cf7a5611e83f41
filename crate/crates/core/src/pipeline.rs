//! The sequential retouching loop.
//!
//! For each operator `k`: downsample the current image so its long edge is at
//! most `downsample_target`, predict a strength from it, and apply operator
//! `k` to the full-resolution image with that strength.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::color_ops::NeurOp;
use crate::error::{Error, Result};
use crate::numerics::{long_edge_size, BilinearResize, ParamSet, Scalar, Tensor};
use crate::predictor::{Predictor, PredictorConfig};
use crate::raster;

/// Total parameter count reported for the reference model.
pub const REFERENCE_PARAM_COUNT: usize = 28_108;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_ops: usize,
    pub feature_dim: usize,
    pub downsample_target: usize,
    pub predictor: PredictorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_ops: 3,
            feature_dim: 64,
            downsample_target: 256,
            predictor: PredictorConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_ops == 0 {
            return Err(Error::Config("at least one operator is required".into()));
        }
        if self.feature_dim == 0 || self.downsample_target == 0 {
            return Err(Error::Config(
                "feature_dim and downsample_target must be positive".into(),
            ));
        }
        self.predictor.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetouchModel<T = f32> {
    pub config: ModelConfig,
    pub neurops: Vec<NeurOp<T>>,
    pub predictor: Predictor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetouchResult {
    /// Final image, clamped to `[0, 1]`.
    pub output: Tensor<f32>,
    pub strengths: Vec<f32>,
    /// `I_1 … I_K`, each clamped for display; the last equals `output`.
    pub intermediates: Vec<Tensor<f32>>,
}

/// Bilinear shrink so that `max(H, W) <= target`; never upsamples.
pub fn downsample_long_edge<T: Scalar>(img: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    let (_, h, w) = img.chw()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("cannot downsample an empty image"));
    }
    if target == 0 {
        return Err(Error::invalid("downsample target must be at least 1"));
    }
    let out = long_edge_size(h, w, target);
    if out == (h, w) {
        return Ok(img.clone());
    }
    BilinearResize::new((h, w), out)?.forward(img)
}

impl<T: Scalar> RetouchModel<T> {
    pub fn random<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let neurops = (0..config.num_ops)
            .map(|_| NeurOp::random(config.feature_dim, rng))
            .collect();
        let predictor = Predictor::random(config.predictor.clone(), config.num_ops, rng)?;
        Ok(RetouchModel {
            config,
            neurops,
            predictor,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(RetouchModel {
            neurops: (0..config.num_ops)
                .map(|_| NeurOp::zeros(config.feature_dim))
                .collect(),
            predictor: Predictor::zeros(config.predictor.clone(), config.num_ops)?,
            config,
        })
    }

    pub fn num_ops(&self) -> usize {
        self.neurops.len()
    }

    pub fn cast<U: Scalar>(&self) -> RetouchModel<U> {
        RetouchModel {
            config: self.config.clone(),
            neurops: self.neurops.iter().map(NeurOp::cast).collect(),
            predictor: self.predictor.cast(),
        }
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            neurops: self.neurops.iter().map(|n| n.param_count()).collect(),
            backbones: self
                .predictor
                .backbones
                .iter()
                .map(|b| b.param_count())
                .collect(),
            heads: self
                .predictor
                .heads
                .iter()
                .map(|h| h.param_count())
                .collect(),
        }
    }

    /// Unclamped intermediate `I_{k+1}` from `I_k` with a given strength.
    pub fn apply_op(&self, k: usize, img: &Tensor<T>, strength: T) -> Result<Tensor<T>> {
        let op = self.neurops.get(k).ok_or_else(|| {
            Error::invalid(format!(
                "operator index {k} out of range for {} operators",
                self.num_ops()
            ))
        })?;
        op.apply_image(img, strength)
    }

    /// Strength operator `k` would receive for the (unclamped) image `img`.
    pub fn predict_strength(&self, img: &Tensor<T>, k: usize) -> Result<T> {
        let small = downsample_long_edge(img, self.config.downsample_target)?;
        self.predictor.predict(&small, k)
    }
}

impl RetouchModel<f32> {
    /// Fully automatic retouch: predicts every strength along the way.
    pub fn retouch(&self, img: &Tensor<f32>) -> Result<RetouchResult> {
        raster::rgb_dims(img)?;
        let mut strengths = Vec::with_capacity(self.num_ops());
        let mut intermediates = Vec::with_capacity(self.num_ops());
        let mut current = img.clone();
        for k in 0..self.num_ops() {
            let v = self.predict_strength(&current, k)?;
            current = self.apply_op(k, &current, v)?;
            strengths.push(v);
            intermediates.push(raster::clamp01(&current));
        }
        Ok(RetouchResult {
            output: raster::clamp01(&current),
            strengths,
            intermediates,
        })
    }

    /// Replays the pipeline with user-supplied strengths, bypassing the predictors.
    pub fn retouch_with_strengths(
        &self,
        img: &Tensor<f32>,
        strengths: &[f32],
    ) -> Result<Tensor<f32>> {
        let mut res = self.replay(img, strengths)?;
        Ok(res.intermediates.pop().expect("at least one operator"))
    }

    /// Like [`RetouchModel::retouch_with_strengths`] but keeps every intermediate.
    pub fn replay(&self, img: &Tensor<f32>, strengths: &[f32]) -> Result<RetouchResult> {
        raster::rgb_dims(img)?;
        if strengths.len() != self.num_ops() {
            return Err(Error::invalid(format!(
                "expected {} strengths, got {}",
                self.num_ops(),
                strengths.len()
            )));
        }
        let mut intermediates = Vec::with_capacity(self.num_ops());
        let mut current = img.clone();
        for (k, &v) in strengths.iter().enumerate() {
            current = self.apply_op(k, &current, v)?;
            intermediates.push(raster::clamp01(&current));
        }
        Ok(RetouchResult {
            output: raster::clamp01(&current),
            strengths: strengths.to_vec(),
            intermediates,
        })
    }
}

impl<T: Scalar> ParamSet<T> for RetouchModel<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (k, op) in self.neurops.iter().enumerate() {
            out.extend(crate::numerics::prefixed(
                &format!("neurop{k}"),
                op.named_tensors(),
            ));
        }
        out.extend(crate::numerics::prefixed(
            "predictor",
            self.predictor.named_tensors(),
        ));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for op in &mut self.neurops {
            out.extend(op.tensors_mut());
        }
        out.extend(self.predictor.tensors_mut());
        out
    }
}

/// Trainable parameter counts broken down by component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelSummary {
    pub neurops: Vec<usize>,
    pub backbones: Vec<usize>,
    pub heads: Vec<usize>,
}

impl ModelSummary {
    pub fn total(&self) -> usize {
        self.neurops
            .iter()
            .chain(&self.backbones)
            .chain(&self.heads)
            .sum()
    }
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, n) in self.neurops.iter().enumerate() {
            writeln!(f, "neurop {k:<2}            {n:>8}")?;
        }
        for (i, n) in self.backbones.iter().enumerate() {
            writeln!(f, "predictor backbone {i:<2} {n:>7}")?;
        }
        for (k, n) in self.heads.iter().enumerate() {
            writeln!(f, "predictor head {k:<2}    {n:>8}")?;
        }
        writeln!(f, "total                 {:>8}", self.total())?;
        write!(f, "reference             {REFERENCE_PARAM_COUNT:>8}")
    }
}
