//! Strength predictors.
//!
//! Two strided convolutions (each followed by ReLU) extract a 32-channel
//! feature map, global pooling reduces it to channel statistics, and one
//! fully connected head per operator maps those to a strength through tanh.
//! The convolutional backbone is shared across operators unless
//! `share_backbone` is turned off.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    prefixed, relu, relu_backward, stats_pool_backward, stats_pool_with, ConvLayer, FcLayer,
    ParamSet, PoolingSet, Scalar, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Output channels of the first convolution.
    pub hidden_channels: usize,
    /// Output channels of the second convolution, i.e. the pooled width.
    pub feature_channels: usize,
    pub kernel1: usize,
    pub kernel2: usize,
    pub stride: usize,
    pub padding: usize,
    pub pooling: PoolingSet,
    pub share_backbone: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden_channels: 8,
            feature_channels: 32,
            kernel1: 7,
            kernel2: 7,
            stride: 2,
            padding: 1,
            pooling: PoolingSet::ALL,
            share_backbone: true,
        }
    }
}

impl PredictorConfig {
    pub fn head_inputs(&self) -> usize {
        self.feature_channels * self.pooling.count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels == 0 || self.feature_channels == 0 {
            return Err(Error::Config(
                "predictor channel counts must be positive".into(),
            ));
        }
        if self.kernel1 == 0 || self.kernel2 == 0 || self.stride == 0 {
            return Err(Error::Config(
                "predictor kernels and stride must be positive".into(),
            ));
        }
        if self.pooling.count() == 0 {
            return Err(Error::Config(
                "at least one pooling statistic is required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T = f32> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

impl<T: Scalar> Backbone<T> {
    fn random<R: Rng + ?Sized>(cfg: &PredictorConfig, rng: &mut R) -> Self {
        Backbone {
            conv1: ConvLayer::random(
                3,
                cfg.hidden_channels,
                cfg.kernel1,
                cfg.stride,
                cfg.padding,
                rng,
            ),
            conv2: ConvLayer::random(
                cfg.hidden_channels,
                cfg.feature_channels,
                cfg.kernel2,
                cfg.stride,
                cfg.padding,
                rng,
            ),
        }
    }

    fn zeros(cfg: &PredictorConfig) -> Self {
        Backbone {
            conv1: ConvLayer::zeros(3, cfg.hidden_channels, cfg.kernel1, cfg.stride, cfg.padding),
            conv2: ConvLayer::zeros(
                cfg.hidden_channels,
                cfg.feature_channels,
                cfg.kernel2,
                cfg.stride,
                cfg.padding,
            ),
        }
    }

    fn cast<U: Scalar>(&self) -> Backbone<U> {
        Backbone {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
        }
    }
}

impl<T: Scalar> ParamSet<T> for Backbone<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        prefixed("conv1", self.conv1.named_tensors())
            .chain(prefixed("conv2", self.conv2.named_tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.conv1.tensors_mut();
        v.extend(self.conv2.tensors_mut());
        v
    }
}

/// All K strength predictors.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor<T = f32> {
    pub config: PredictorConfig,
    /// One entry when shared, otherwise one per operator.
    pub backbones: Vec<Backbone<T>>,
    pub heads: Vec<FcLayer<T>>,
}

/// Activations of one prediction, kept for backprop.
#[derive(Clone, Debug)]
pub struct PredictorCache<T> {
    k: usize,
    input: Tensor<T>,
    pre1: Tensor<T>,
    act1: Tensor<T>,
    pre2: Tensor<T>,
    act2: Tensor<T>,
    pooled: Tensor<T>,
    strength: T,
}

impl<T> PredictorCache<T> {
    pub fn strength(&self) -> &T {
        &self.strength
    }
}

impl<T: Scalar> Predictor<T> {
    pub fn random<R: Rng + ?Sized>(
        config: PredictorConfig,
        num_ops: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let n_backbones = if config.share_backbone { 1 } else { num_ops };
        let backbones = (0..n_backbones)
            .map(|_| Backbone::random(&config, rng))
            .collect();
        let heads = (0..num_ops)
            .map(|_| FcLayer::random(config.head_inputs(), 1, rng))
            .collect();
        Ok(Predictor {
            config,
            backbones,
            heads,
        })
    }

    pub fn zeros(config: PredictorConfig, num_ops: usize) -> Result<Self> {
        config.validate()?;
        let n_backbones = if config.share_backbone { 1 } else { num_ops };
        Ok(Predictor {
            backbones: (0..n_backbones).map(|_| Backbone::zeros(&config)).collect(),
            heads: (0..num_ops)
                .map(|_| FcLayer::zeros(config.head_inputs(), 1))
                .collect(),
            config,
        })
    }

    pub fn num_ops(&self) -> usize {
        self.heads.len()
    }

    pub fn cast<U: Scalar>(&self) -> Predictor<U> {
        Predictor {
            config: self.config.clone(),
            backbones: self.backbones.iter().map(Backbone::cast).collect(),
            heads: self.heads.iter().map(FcLayer::cast).collect(),
        }
    }

    fn backbone_index(&self, k: usize) -> Result<usize> {
        if k >= self.heads.len() {
            return Err(Error::invalid(format!(
                "operator index {k} out of range for {} predictors",
                self.heads.len()
            )));
        }
        Ok(if self.config.share_backbone { 0 } else { k })
    }

    pub fn backbone_for(&self, k: usize) -> Result<&Backbone<T>> {
        Ok(&self.backbones[self.backbone_index(k)?])
    }

    /// Strength in `(-1, 1)` for operator `k` (0-based) given the
    /// downsampled image the operator will be applied to.
    pub fn predict(&self, img: &Tensor<T>, k: usize) -> Result<T> {
        Ok(self.forward_train(img, k)?.strength)
    }

    pub fn forward_train(&self, img: &Tensor<T>, k: usize) -> Result<PredictorCache<T>> {
        let bb = &self.backbones[self.backbone_index(k)?];
        let pre1 = bb.conv1.forward(img)?;
        let act1 = relu(&pre1);
        let pre2 = bb.conv2.forward(&act1)?;
        let act2 = relu(&pre2);
        let pooled = stats_pool_with(&act2, self.config.pooling)?;
        let logit = self.heads[k].forward(&pooled)?;
        Ok(PredictorCache {
            k,
            input: img.clone(),
            pre1,
            act1,
            pre2,
            act2,
            pooled,
            strength: logit.data()[0].tanh(),
        })
    }

    /// Backward from `∂L/∂v`. Accumulates into `grads`, optionally returning
    /// the gradient w.r.t. the input image.
    pub fn backward(
        &self,
        cache: &PredictorCache<T>,
        grad_strength: T,
        grads: &mut Predictor<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let k = cache.k;
        let bi = self.backbone_index(k)?;
        let (bb, gbb) = (&self.backbones[bi], &mut grads.backbones[bi]);
        let v = cache.strength;
        let dlogit = Tensor::from_vec(&[1], vec![grad_strength * (T::one() - v * v)])?;
        let dpooled = self.heads[k].backward(&cache.pooled, &dlogit, &mut grads.heads[k])?;
        let dact2 = stats_pool_backward(&cache.act2, &dpooled, self.config.pooling)?;
        let dpre2 = relu_backward(&cache.pre2, &dact2)?;
        let dact1 = bb.conv2.backward(&cache.act1, &dpre2, &mut gbb.conv2)?;
        let dpre1 = relu_backward(&cache.pre1, &dact1)?;
        let dimg = bb.conv1.backward(&cache.input, &dpre1, &mut gbb.conv1)?;
        Ok(want_input_grad.then_some(dimg))
    }
}

impl<T: Scalar> ParamSet<T> for Predictor<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, bb) in self.backbones.iter().enumerate() {
            out.extend(prefixed(&format!("backbone{i}"), bb.named_tensors()));
        }
        for (k, head) in self.heads.iter().enumerate() {
            out.extend(prefixed(&format!("head{k}"), head.named_tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for bb in &mut self.backbones {
            out.extend(bb.tensors_mut());
        }
        for head in &mut self.heads {
            out.extend(head.tensors_mut());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> PredictorConfig {
        PredictorConfig {
            hidden_channels: 2,
            feature_channels: 2,
            kernel1: 3,
            kernel2: 3,
            ..PredictorConfig::default()
        }
    }

    fn image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[3, h, w],
            (0..3 * h * w).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_parameter_count() {
        let p = Predictor::<f32>::random(
            PredictorConfig::default(),
            3,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        // conv1 8·3·49+8, conv2 32·8·49+32, heads 3·(96+1)
        assert_eq!(p.param_count(), 1184 + 12_576 + 291);
    }

    #[test]
    fn output_stays_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Predictor::<f32>::random(PredictorConfig::default(), 3, &mut rng).unwrap();
        for head in &mut p.heads {
            head.weight.data_mut().iter_mut().for_each(|w| *w *= 0.5);
        }
        for seed in 0..5 {
            let v = p
                .predict(&image(seed, 40, 30), (seed % 3) as usize)
                .unwrap();
            assert!(v > -1.0 && v < 1.0);
        }
    }

    #[test]
    fn zero_head_gives_zero_strength() {
        let mut p = Predictor::<f32>::random(
            PredictorConfig::default(),
            3,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        p.heads[1] = FcLayer::zeros(96, 1);
        assert_eq!(p.predict(&image(3, 32, 32), 1).unwrap(), 0.0);
    }

    #[test]
    fn index_out_of_range() {
        let p = Predictor::<f32>::zeros(PredictorConfig::default(), 3).unwrap();
        assert!(matches!(
            p.predict(&image(0, 16, 16), 3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn hand_traced_forward() {
        // 4x4 input, 3x3 kernels, stride 2, pad 1: 4x4 -> 2x2 -> 1x1.
        let cfg = PredictorConfig {
            hidden_channels: 1,
            feature_channels: 1,
            kernel1: 3,
            kernel2: 3,
            ..PredictorConfig::default()
        };
        let mut p = Predictor::<f64>::zeros(cfg, 1).unwrap();
        // conv1: only the centre tap of the red channel, weight 0.5, bias 0.1
        p.backbones[0].conv1.weight.data_mut()[4] = 0.5;
        p.backbones[0].conv1.bias.data_mut()[0] = 0.1;
        // conv2: all taps 0.25, bias -0.05
        p.backbones[0].conv2.weight.fill(0.25);
        p.backbones[0].conv2.bias.data_mut()[0] = -0.05;
        // head: [max, avg, std] weights
        p.heads[0]
            .weight
            .data_mut()
            .copy_from_slice(&[0.3, 0.2, 0.1]);
        p.heads[0].bias.data_mut()[0] = 0.05;
        let red: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let mut data = red.clone();
        data.extend(vec![0.9; 32]);
        let img = Tensor::from_vec(&[3, 4, 4], data).unwrap();

        // conv1 output (oy, ox) samples red at (2·oy, 2·ox)
        let c1: Vec<f64> = [(0, 0), (0, 2), (2, 0), (2, 2)]
            .iter()
            .map(|&(y, x)| (0.5 * red[y * 4 + x] + 0.1f64).max(0.0))
            .collect();
        // conv2 output 1x1: padded 2x2 map fully inside the 3x3 window at offset (1,1)
        let c2 = (0.25 * c1.iter().sum::<f64>() - 0.05).max(0.0);
        // single spatial position: max = avg = c2, std = 0
        let expected = (0.3 * c2 + 0.2 * c2 + 0.0 + 0.05).tanh();
        let got = p.predict(&img, 0).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn shared_backbone_affects_every_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = Predictor::<f32>::random(PredictorConfig::default(), 3, &mut rng).unwrap();
        let img = image(5, 48, 48);
        let before: Vec<f32> = (0..3).map(|k| p.predict(&img, k).unwrap()).collect();
        p.backbones[0]
            .conv2
            .bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b += 0.3);
        for (k, b) in before.iter().enumerate() {
            assert_ne!(p.predict(&img, k).unwrap(), *b);
        }
    }

    #[test]
    fn private_backbones_double_the_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shared = Predictor::<f32>::random(PredictorConfig::default(), 3, &mut rng).unwrap();
        let cfg = PredictorConfig {
            share_backbone: false,
            ..PredictorConfig::default()
        };
        let mut private = Predictor::<f32>::random(cfg, 3, &mut rng).unwrap();
        assert_eq!(private.backbones.len(), 3);
        assert_eq!(private.param_count(), 3 * 13_760 + 291);
        let img = image(7, 48, 48);
        let v1 = private.predict(&img, 1).unwrap();
        private.backbones[0]
            .conv2
            .bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b += 0.3);
        assert_eq!(private.predict(&img, 1).unwrap(), v1);
        assert!(private.param_count() > shared.param_count());
    }

    #[test]
    fn tiny_config_runs_on_8x8() {
        let p =
            Predictor::<f32>::random(tiny_config(), 2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(p.predict(&image(9, 8, 8), 1).is_ok());
    }
}
