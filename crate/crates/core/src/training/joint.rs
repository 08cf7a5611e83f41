//! End-to-end training of operators and predictors through the whole
//! sequential pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color_ops::NeurOpCache;
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, long_edge_size, Adam, AdamConfig, BilinearResize, ParamSet, Scalar, Tensor,
};
use crate::pipeline::RetouchModel;
use crate::predictor::PredictorCache;
use crate::training::augment::augment;
use crate::training::losses::{
    hrp_weights, loss_total, loss_total_grad, LossBreakdown, LossWeights,
};
use crate::weights::{save_weights, TrainingState, WeightsMeta};

/// How the operators start joint training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Random operators, trained jointly from scratch.
    Random,
    /// Surrogate-initialised operators kept frozen; only predictors train.
    StandardFixed,
    /// Surrogate-initialised operators, then trained jointly.
    #[default]
    StandardFinetune,
}

impl InitMode {
    pub fn uses_init(&self) -> bool {
        !matches!(self, InitMode::Random)
    }

    pub fn trains_neurops(&self) -> bool {
        !matches!(self, InitMode::StandardFixed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Square crop side; images smaller than this are used whole.
    pub crop_size: usize,
    pub augment: bool,
    /// Loss weight inside the region mask (1 outside).
    pub hrp_weight: f64,
    pub loss: LossWeights,
    pub init_mode: InitMode,
    /// Write a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            batch_size: 1,
            adam: AdamConfig::default(),
            seed: 0,
            crop_size: 256,
            augment: true,
            hrp_weight: 5.0,
            loss: LossWeights::default(),
            init_mode: InitMode::default(),
            checkpoint_every: 0,
            checkpoint_path: None,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.batch_size == 0 || self.crop_size == 0 {
            return Err(Error::Config(
                "batch_size and crop_size must be positive".into(),
            ));
        }
        if !(self.hrp_weight > 0.0) {
            return Err(Error::Config("hrp_weight must be positive".into()));
        }
        self.loss.validate()
    }
}

struct StepCache<T> {
    resize: Option<BilinearResize>,
    predictor: PredictorCache<T>,
    neurop: NeurOpCache<T>,
}

fn shrink<T: Scalar>(
    img: &Tensor<T>,
    target: usize,
) -> Result<(Option<BilinearResize>, Tensor<T>)> {
    let (_, h, w) = img.chw()?;
    let out = long_edge_size(h, w, target);
    if out == (h, w) {
        return Ok((None, img.clone()));
    }
    let r = BilinearResize::new((h, w), out)?;
    let small = r.forward(img)?;
    Ok((Some(r), small))
}

/// Unclamped pipeline output, the value the training loss sees.
pub fn pipeline_forward<T: Scalar>(
    model: &RetouchModel<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let mut current = input.clone();
    let mut strengths = Vec::with_capacity(model.num_ops());
    for k in 0..model.num_ops() {
        let v = model.predict_strength(&current, k)?;
        current = model.apply_op(k, &current, v)?;
        strengths.push(v);
    }
    Ok((current, strengths))
}

pub fn pipeline_loss<T: Scalar>(
    model: &RetouchModel<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    pixel_weights: Option<&Tensor<T>>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let (out, _) = pipeline_forward(model, input)?;
    loss_total(&out, target, weights, pixel_weights)
}

/// Loss of one pair and its gradient w.r.t. every parameter, accumulated
/// into `grads`. The gradient flows through each operator into the image it
/// was given, and through the predictor and downsampler into the same image.
pub fn pipeline_loss_and_grad<T: Scalar>(
    model: &RetouchModel<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    pixel_weights: Option<&Tensor<T>>,
    weights: &LossWeights,
    grads: &mut RetouchModel<T>,
) -> Result<LossBreakdown> {
    let k_ops = model.num_ops();
    let mut caches: Vec<StepCache<T>> = Vec::with_capacity(k_ops);
    let mut current = input.clone();
    for k in 0..k_ops {
        let (resize, small) = shrink(&current, model.config.downsample_target)?;
        let predictor = model.predictor.forward_train(&small, k)?;
        let v = *predictor.strength();
        let (next, neurop) = model.neurops[k].forward_train(&current, v)?;
        caches.push(StepCache {
            resize,
            predictor,
            neurop,
        });
        current = next;
    }
    let (breakdown, mut grad) = loss_total_grad(&current, target, weights, pixel_weights)?;
    for (k, cache) in caches.iter().enumerate().rev() {
        // the first operator's input is the photo itself; no gradient needed
        let need_input = k > 0;
        let (dimg, dv) =
            model.neurops[k].backward(&cache.neurop, &grad, &mut grads.neurops[k], need_input)?;
        let dsmall =
            model
                .predictor
                .backward(&cache.predictor, dv, &mut grads.predictor, need_input)?;
        if let (Some(mut dimg), Some(dsmall)) = (dimg, dsmall) {
            let dpred = match &cache.resize {
                Some(r) => r.backward(&dsmall)?,
                None => dsmall,
            };
            dimg.add_assign(&dpred)?;
            grad = dimg;
        }
    }
    Ok(breakdown)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    /// Total loss per iteration (mean over the batch).
    pub history: Vec<f64>,
    pub final_iteration: usize,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    /// Mean of the last `n` recorded losses.
    pub fn trailing_mean(&self, n: usize) -> f64 {
        let tail = &self.history[self.history.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

fn sample_pair(data: &[ImagePair], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<ImagePair> {
    let pair = &data[rng.random_range(0..data.len())];
    if !cfg.augment {
        return Ok(pair.clone());
    }
    let (_, h, w) = pair.input.chw()?;
    augment(pair, cfg.crop_size.min(h).min(w), rng)
}

fn new_state(model: &RetouchModel<f32>, adam: AdamConfig) -> TrainingState {
    let shapes: Vec<Vec<usize>> = model
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    TrainingState {
        adam: Adam::new(adam, shapes.iter().map(Vec::as_slice)),
        iteration: 0,
    }
}

fn checkpoint(
    cfg: &TrainConfig,
    model: &RetouchModel<f32>,
    state: &TrainingState,
    report: &mut TrainReport,
) -> Result<()> {
    let Some(path) = &cfg.checkpoint_path else {
        return Ok(());
    };
    let meta = WeightsMeta {
        seed: Some(cfg.seed),
        provenance: BTreeMap::from([
            ("stage".to_string(), "joint".to_string()),
            ("iteration".to_string(), state.iteration.to_string()),
            ("init_mode".to_string(), format!("{:?}", cfg.init_mode)),
        ]),
    };
    save_weights(path, model, &meta, Some(state))?;
    report.checkpoints.push(path.clone());
    Ok(())
}

/// Adam on the pipeline loss over randomly drawn (and optionally augmented)
/// pairs. Deterministic for a fixed seed; resuming from a saved state
/// continues the exact same sample sequence.
///
/// A non-finite loss aborts before the update, so `model` and the last
/// checkpoint hold the last good parameters.
pub fn train_joint(
    model: &mut RetouchModel<f32>,
    data: &[ImagePair],
    cfg: &TrainConfig,
    resume: Option<TrainingState>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let mut state = resume.unwrap_or_else(|| new_state(model, cfg.adam));
    if state.adam.states.len() != model.named_tensors().len() {
        return Err(Error::invalid("optimizer state does not match the model"));
    }
    state.adam.config = cfg.adam;
    let neurop_tensors: usize = model.neurops.iter().map(|n| n.named_tensors().len()).sum();
    let mut grads = RetouchModel::<f32>::zeros(model.config.clone())?;
    let mut report = TrainReport::default();
    let scale = 1.0 / cfg.batch_size as f32;

    for it in state.iteration..cfg.iterations {
        let mut rng = iteration_rng(cfg.seed, it);
        grads.zero();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let sample = sample_pair(data, cfg, &mut rng)?;
            let pw = sample.mask.as_ref().map(|m| hrp_weights(m, cfg.hrp_weight));
            let b = pipeline_loss_and_grad(
                model,
                &sample.input,
                &sample.target,
                pw.as_ref(),
                &cfg.loss,
                &mut grads,
            )?;
            loss += b.total;
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss,
            });
        }
        let grad_tensors = grads.named_tensors();
        for (i, ((p, (_, g)), s)) in model
            .tensors_mut()
            .into_iter()
            .zip(&grad_tensors)
            .zip(&mut state.adam.states)
            .enumerate()
        {
            if i < neurop_tensors && !cfg.init_mode.trains_neurops() {
                continue;
            }
            if cfg.batch_size > 1 {
                adam_step(p, &g.map(|x| x * scale), s, &cfg.adam)?;
            } else {
                adam_step(p, g, s, &cfg.adam)?;
            }
        }
        state.iteration = it + 1;
        report.history.push(loss);
        if cfg.log_every > 0 && state.iteration % cfg.log_every == 0 {
            eprintln!(
                "train step {:>7}/{}  loss {:.5}",
                state.iteration,
                cfg.iterations,
                report.trailing_mean(cfg.log_every)
            );
        }
        if cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 {
            checkpoint(cfg, model, &state, &mut report)?;
        }
    }
    report.final_iteration = state.iteration;
    if cfg.checkpoint_every == 0 || state.iteration % cfg.checkpoint_every != 0 {
        checkpoint(cfg, model, &state, &mut report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, GradCheck};
    use crate::pipeline::ModelConfig;
    use crate::predictor::PredictorConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_ops: 3,
            feature_dim: 4,
            downsample_target: 6,
            predictor: PredictorConfig {
                hidden_channels: 2,
                feature_channels: 3,
                kernel1: 3,
                kernel2: 3,
                ..PredictorConfig::default()
            },
        }
    }

    fn image(rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(&[3, 8, 8], (0..192).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn check_model(weights: &LossWeights, masked: bool) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = RetouchModel::<f64>::random(tiny_config(), &mut rng).unwrap();
        let (input, target) = (image(&mut rng), image(&mut rng));
        let pw = masked.then(|| {
            let m = Tensor::from_vec(
                &[1, 8, 8],
                (0..64).map(|i| (i % 3 == 0) as u8 as f64).collect(),
            )
            .unwrap();
            hrp_weights(&m, 5.0)
        });
        let mut grads = RetouchModel::<f64>::zeros(tiny_config()).unwrap();
        pipeline_loss_and_grad(&model, &input, &target, pw.as_ref(), weights, &mut grads).unwrap();
        let mut probe = model.clone();
        finite_diff_check(
            |flat| {
                probe.load_flat(flat).unwrap();
                pipeline_loss(&probe, &input, &target, pw.as_ref(), weights)
                    .unwrap()
                    .total
            },
            &model.flatten(),
            &grads.flatten(),
            // 1e-5 sits at the round-off floor of a three-step pipeline loss
            1e-4,
        )
        .unwrap()
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let g = check_model(&LossWeights::default(), false);
        assert!(g.passes(1e-3), "{g:?}");
        let g = check_model(&LossWeights::default(), true);
        assert!(g.passes(1e-3), "{g:?}");
    }

    fn toy_data() -> Vec<ImagePair> {
        crate::synthetic::synthetic_pairs(3, 12, 4)
            .unwrap()
            .into_iter()
            .map(|p| ImagePair::new(p.id, p.input, p.target, None).unwrap())
            .collect()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            iterations: 6,
            crop_size: 8,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn small_model() -> RetouchModel<f32> {
        let cfg = ModelConfig {
            feature_dim: 8,
            ..tiny_config()
        };
        RetouchModel::random(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    #[test]
    fn seeded_training_is_reproducible_and_resumable() {
        let data = toy_data();
        let cfg = toy_config();
        let mut a = small_model();
        let mut b = small_model();
        train_joint(&mut a, &data, &cfg, None).unwrap();
        train_joint(&mut b, &data, &cfg, None).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt.bin");
        let mut c = small_model();
        let half = TrainConfig {
            iterations: 3,
            checkpoint_path: Some(ckpt.clone()),
            ..cfg.clone()
        };
        train_joint(&mut c, &data, &half, None).unwrap();
        let loaded = crate::weights::load_weights(&ckpt).unwrap();
        assert_eq!(loaded.model, c);
        let mut d = loaded.model;
        train_joint(&mut d, &data, &cfg, loaded.state).unwrap();
        assert_eq!(d, a);
    }

    #[test]
    fn standard_fixed_freezes_operators() {
        let start = small_model();
        let mut m = start.clone();
        let cfg = TrainConfig {
            init_mode: InitMode::StandardFixed,
            ..toy_config()
        };
        train_joint(&mut m, &toy_data(), &cfg, None).unwrap();
        assert_eq!(m.neurops, start.neurops);
        assert_ne!(m.predictor, start.predictor);
    }

    #[test]
    fn non_finite_loss_aborts_before_updating() {
        let mut m = small_model();
        let mut data = toy_data();
        for p in &mut data {
            p.target = p.target.map(|_| f32::INFINITY);
        }
        let before = m.clone();
        let err = train_joint(&mut m, &data, &toy_config(), None).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 0, .. }), "{err}");
        assert_eq!(m, before);
    }
}
