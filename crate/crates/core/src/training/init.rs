//! Operator initialisation against an analytic surrogate.
//!
//! A corpus holds source images and a ladder of strengths; the image for
//! level `m` is rendered on demand so large corpora stay cheap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color_ops::{NeurOp, StandardOpKind};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, ParamSet, Tensor};
use crate::raster;
use crate::training::losses::{loss_reconstruction, loss_reconstruction_grad};

#[derive(Clone, Debug)]
pub struct InitCorpus {
    pub kind: StandardOpKind,
    /// Strictly increasing strength levels; always contains 0.
    pub strengths: Vec<f32>,
    pub sources: Vec<Tensor<f32>>,
}

/// `M` evenly spaced levels on `[−1, 1]`, plus 0 when `M` is even.
pub fn strength_levels(m: usize) -> Result<Vec<f32>> {
    if m < 2 {
        return Err(Error::invalid(format!(
            "an init corpus needs at least 2 strength levels, got {m}"
        )));
    }
    let mut levels: Vec<f32> = (0..m)
        .map(|i| (-1.0 + 2.0 * i as f64 / (m - 1) as f64) as f32)
        .collect();
    if m % 2 == 0 {
        levels.insert(m / 2, 0.0);
    } else {
        levels[m / 2] = 0.0;
    }
    Ok(levels)
}

pub fn build_init_corpus(
    images: &[Tensor<f32>],
    kind: StandardOpKind,
    m: usize,
) -> Result<InitCorpus> {
    let strengths = strength_levels(m)?;
    for img in images {
        raster::rgb_dims(img)?;
    }
    Ok(InitCorpus {
        kind,
        strengths,
        sources: images.to_vec(),
    })
}

impl InitCorpus {
    pub fn levels(&self) -> usize {
        self.strengths.len()
    }

    /// `I_m` for source `i`.
    pub fn image(&self, i: usize, m: usize) -> Result<Tensor<f32>> {
        self.kind.apply(&self.sources[i], self.strengths[m])
    }

    fn check(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::invalid("init corpus has no source images"));
        }
        if self.levels() < 2 {
            return Err(Error::invalid(
                "init corpus needs at least 2 strength levels",
            ));
        }
        Ok(())
    }
}

/// Unary and pairwise residuals, averaged over sources.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct InitLosses {
    pub unary: f64,
    pub pairwise: f64,
}

impl InitLosses {
    pub fn total(&self) -> f64 {
        self.unary + self.pairwise
    }
}

/// Full (non-sampled) evaluation of both initialisation objectives.
pub fn init_losses(op: &NeurOp<f32>, corpus: &InitCorpus) -> Result<InitLosses> {
    corpus.check()?;
    let m = corpus.levels();
    let mut out = InitLosses::default();
    for i in 0..corpus.sources.len() {
        let images: Vec<Tensor<f32>> = (0..m).map(|a| corpus.image(i, a)).collect::<Result<_>>()?;
        let mut unary = 0.0;
        let mut pairwise = 0.0;
        for a in 0..m {
            unary += loss_reconstruction(&op.apply_image(&images[a], 0.0)?, &images[a], None)?;
            for b in 0..m {
                if a == b {
                    continue;
                }
                let dv = corpus.strengths[b] - corpus.strengths[a];
                pairwise +=
                    loss_reconstruction(&op.apply_image(&images[a], dv)?, &images[b], None)?;
            }
        }
        out.unary += unary / m as f64;
        out.pairwise += pairwise / (m * (m - 1)) as f64;
    }
    let n = corpus.sources.len() as f64;
    out.unary /= n;
    out.pairwise /= n;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub iterations: usize,
    pub levels: usize,
    /// Number of source images in each corpus.
    pub source_images: usize,
    /// Long edge the sources are reduced to.
    pub image_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Print progress every this many steps (0 = quiet).
    pub log_every: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            iterations: 2_000,
            levels: 9,
            source_images: 50,
            image_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            log_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InitReport {
    /// Sampled per-step objective (unary + pairwise).
    pub history: Vec<f64>,
}

fn accumulate(
    op: &NeurOp<f32>,
    grads: &mut NeurOp<f32>,
    input: &Tensor<f32>,
    v: f32,
    target: &Tensor<f32>,
) -> Result<f64> {
    let (out, cache) = op.forward_train(input, v)?;
    let (loss, g) = loss_reconstruction_grad(&out, target, None)?;
    op.backward(&cache, &g, grads, false)?;
    Ok(loss)
}

/// Adam on the sampled objective: each step draws a source, one level for
/// the unary term and one ordered pair of distinct levels for the pairwise term.
pub fn train_init(
    op: &mut NeurOp<f32>,
    corpus: &InitCorpus,
    config: &InitConfig,
) -> Result<InitReport> {
    corpus.check()?;
    if config.iterations == 0 {
        return Err(Error::Config("init iterations must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shapes: Vec<Vec<usize>> = op
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam = Adam::new(config.adam, shapes.iter().map(Vec::as_slice));
    let mut grads = NeurOp::zeros(op.feature_dim());
    let m = corpus.levels();
    let mut report = InitReport::default();
    for it in 0..config.iterations {
        let i = rng.random_range(0..corpus.sources.len());
        let u = rng.random_range(0..m);
        let a = rng.random_range(0..m);
        let b = (a + rng.random_range(1..m)) % m;
        grads.zero();
        let iu = corpus.image(i, u)?;
        let mut loss = accumulate(op, &mut grads, &iu, 0.0, &iu)?;
        let (ia, ib) = (corpus.image(i, a)?, corpus.image(i, b)?);
        loss += accumulate(
            op,
            &mut grads,
            &ia,
            corpus.strengths[b] - corpus.strengths[a],
            &ib,
        )?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss,
            });
        }
        let g: Vec<&Tensor<f32>> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        adam.step(op.tensors_mut(), g)?;
        report.history.push(loss);
        if config.log_every > 0 && (it + 1) % config.log_every == 0 {
            let tail = &report.history[report.history.len().saturating_sub(config.log_every)..];
            eprintln!(
                "init {} step {:>6}/{}  loss {:.5}",
                corpus.kind,
                it + 1,
                config.iterations,
                tail.iter().sum::<f64>() / tail.len() as f64
            );
        }
    }
    Ok(report)
}

/// Reduces images to the configured long edge and keeps at most
/// `source_images` of them, in order.
pub fn prepare_init_sources(
    images: &[Tensor<f32>],
    config: &InitConfig,
) -> Result<Vec<Tensor<f32>>> {
    images
        .iter()
        .take(config.source_images)
        .map(|img| crate::pipeline::downsample_long_edge(img, config.image_size))
        .collect()
}

/// Initialises the leading operators of `model` against the surrogates in
/// [`StandardOpKind::ORDER`]; operators beyond those keep their random
/// weights. Each operator uses its own seed offset so runs are reproducible.
pub fn init_model_operators(
    model: &mut crate::pipeline::RetouchModel<f32>,
    sources: &[Tensor<f32>],
    config: &InitConfig,
) -> Result<Vec<(StandardOpKind, InitReport)>> {
    let mut out = Vec::new();
    for (k, kind) in StandardOpKind::ORDER
        .iter()
        .enumerate()
        .take(model.num_ops())
    {
        let corpus = build_init_corpus(sources, *kind, config.levels)?;
        let cfg = InitConfig {
            seed: config.seed.wrapping_add(k as u64),
            ..config.clone()
        };
        let report = train_init(&mut model.neurops[k], &corpus, &cfg)?;
        out.push((*kind, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(seed: usize, h: usize, w: usize) -> Tensor<f32> {
        let data = (0..3 * h * w)
            .map(|i| (((i + seed) * 7919 % 1009) as f32 / 1008.0).powf(1.3))
            .collect();
        Tensor::from_vec(&[3, h, w], data).unwrap()
    }

    #[test]
    fn levels() {
        assert_eq!(strength_levels(3).unwrap(), vec![-1.0, 0.0, 1.0]);
        let l = strength_levels(40).unwrap();
        assert_eq!(l.len(), 41);
        assert!(l.windows(2).all(|p| p[0] < p[1]));
        assert!(l.contains(&0.0));
        for (a, b) in l.iter().zip(l.iter().rev()) {
            assert!((a + b).abs() < 1e-6);
        }
        assert!(strength_levels(1).is_err());
    }

    #[test]
    fn zero_level_is_the_source() {
        let src = source(1, 5, 6);
        let c = build_init_corpus(std::slice::from_ref(&src), StandardOpKind::Exposure, 9).unwrap();
        let zero = c.strengths.iter().position(|&v| v == 0.0).unwrap();
        assert_eq!(c.image(0, zero).unwrap(), src);
    }

    #[test]
    fn losses_match_direct_summation() {
        use rand::SeedableRng;
        let op = NeurOp::<f32>::random(8, &mut ChaCha8Rng::seed_from_u64(3));
        let srcs = vec![source(0, 4, 4), source(5, 4, 4)];
        let c = build_init_corpus(&srcs, StandardOpKind::Vibrance, 3).unwrap();
        let got = init_losses(&op, &c).unwrap();

        let l1 = |a: &Tensor<f32>, b: &Tensor<f32>| -> f64 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (*x as f64 - *y as f64).abs())
                .sum::<f64>()
                / a.len() as f64
        };
        let (mut unary, mut pair, mut pairs) = (0.0, 0.0, 0);
        for i in 0..2 {
            for a in 0..3 {
                let ia = c.image(i, a).unwrap();
                unary += l1(&op.apply_image(&ia, 0.0).unwrap(), &ia);
                for b in 0..3 {
                    if a != b {
                        let dv = c.strengths[b] - c.strengths[a];
                        pair += l1(&op.apply_image(&ia, dv).unwrap(), &c.image(i, b).unwrap());
                        pairs += 1;
                    }
                }
            }
        }
        assert_eq!(pairs, 2 * 6);
        assert!(
            (got.unary - unary / 6.0).abs() < 1e-9,
            "{} {}",
            got.unary,
            unary / 6.0
        );
        assert!((got.pairwise - pair / 12.0).abs() < 1e-9);
    }

    #[test]
    fn training_is_seeded() {
        use rand::SeedableRng;
        let srcs = vec![source(0, 6, 6), source(9, 6, 6)];
        let c = build_init_corpus(&srcs, StandardOpKind::Exposure, 5).unwrap();
        let cfg = InitConfig {
            iterations: 20,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            ..InitConfig::default()
        };
        let start = NeurOp::<f32>::random(8, &mut ChaCha8Rng::seed_from_u64(4));
        let (mut a, mut b) = (start.clone(), start.clone());
        let ra = train_init(&mut a, &c, &cfg).unwrap();
        train_init(&mut b, &c, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, start);
        assert_eq!(ra.history.len(), 20);
    }
}
