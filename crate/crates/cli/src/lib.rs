//! Command-line front end and HTTP preview service for the retouching pipeline.

pub mod server;
pub mod session;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use neurop::config::{Config, Preset};
use neurop::data::{
    load_image, load_pair_dataset, save_image, save_pair_dataset, BitDepth, ImagePair, Split,
};
use neurop::metrics::{evaluate, mean_metrics, Metrics};
use neurop::pipeline::{RetouchModel, REFERENCE_PARAM_COUNT};
use neurop::synthetic::{synthetic_images, synthetic_pairs};
use neurop::training::{init_model_operators, prepare_init_sources, train_joint, InitMode};
use neurop::weights::{load_weights, save_weights, TrainingState, WeightsMeta};
use rand::SeedableRng;

#[derive(Debug, Parser)]
#[command(
    name = "neurop",
    version,
    about = "Sequential image retouching with learned color operators"
)]
pub struct Cli {
    /// TOML file overriding the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    /// Seed for model initialisation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Weight file; without it a seeded random model is used.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the operators to the standard surrogates (black clipping, exposure, vibrance).
    InitOps(InitOpsArgs),
    /// Joint training of operators and strength predictors.
    Train(TrainArgs),
    /// Retouch one image.
    Infer(InferArgs),
    /// PSNR / SSIM / ΔE of the model on a paired dataset.
    Eval(EvalArgs),
    /// Start the HTTP preview service.
    Serve(ServeArgs),
    /// Parameter counts of the configured model.
    Summary,
    /// Write a synthetic paired dataset.
    Synth(SynthArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct InitOpsArgs {
    /// Dataset whose `input/` images serve as sources.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use this many generated images as sources instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset evaluated before and after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the optimizer state stored in `--weights`.
    #[arg(long)]
    pub resume: bool,
    /// Override the configured iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated strengths; skips the predictors.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub strengths: Option<Vec<f32>>,
    /// Directory for the clamped intermediate images.
    #[arg(long)]
    pub emit_intermediates: Option<PathBuf>,
    #[arg(long, default_value_t = 8, value_parser = parse_depth)]
    pub bit_depth: u8,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Defaults to `NEUROP_PORT`, then 8080.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = session::DEFAULT_PREVIEW_EDGE)]
    pub preview_edge: usize,
    #[arg(long, default_value_t = 64)]
    pub max_upload_mb: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
}

fn parse_depth(s: &str) -> std::result::Result<u8, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err("bit depth must be 8 or 16".into()),
    }
}

impl Cli {
    pub fn resolve_config(&self) -> Result<Config> {
        let preset = self.preset.map(Preset::from).unwrap_or_default();
        let mut config = match &self.config {
            Some(path) => Config::load(path, preset)?,
            None => Config::preset(preset),
        };
        if let Some(p) = self.preset {
            config.preset = p.into();
        }
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        Ok(config)
    }

    /// The model from `--weights`, or a random one seeded from the config.
    pub fn model(
        &self,
        config: &Config,
    ) -> Result<(RetouchModel<f32>, WeightsMeta, Option<TrainingState>)> {
        match &self.weights {
            Some(path) => {
                let w = load_weights(path)?;
                Ok((w.model, w.meta, w.state))
            }
            None => {
                let seed = config.train.seed;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let model = RetouchModel::random(config.model.clone(), &mut rng)?;
                let mut meta = WeightsMeta {
                    seed: Some(seed),
                    ..Default::default()
                };
                meta.provenance.insert("origin".into(), "random".into());
                Ok((model, meta, None))
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.resolve_config()?;
    match &cli.command {
        Command::InitOps(a) => init_ops(&cli, &config, a),
        Command::Train(a) => train(&cli, &config, a),
        Command::Infer(a) => infer(&cli, &config, a),
        Command::Eval(a) => eval(&cli, &config, a),
        Command::Serve(a) => serve(&cli, &config, a),
        Command::Summary => {
            let (model, _, _) = cli.model(&config)?;
            let s = model.summary();
            print!("{s}");
            println!("total {} (reference {REFERENCE_PARAM_COUNT})", s.total());
            Ok(())
        }
        Command::Synth(a) => synth(&config, a),
        Command::ShowConfig => {
            print!("{}", config.to_toml_string()?);
            Ok(())
        }
    }
}

fn init_sources(
    config: &Config,
    data: Option<&Path>,
    synthetic: Option<usize>,
) -> Result<(Vec<neurop::numerics::Tensor<f32>>, String)> {
    let (images, origin) = match (data, synthetic) {
        (Some(dir), _) => {
            let ds = load_pair_dataset(dir, Split::Train)?;
            let images = ds.pairs.into_iter().map(|p| p.input).collect();
            (images, dir.display().to_string())
        }
        (None, n) => {
            let n = n.unwrap_or(config.init.source_images);
            let size = config.init.image_size;
            (
                synthetic_images(n, size, config.init.seed),
                format!("synthetic:{n}x{size}"),
            )
        }
    };
    if images.is_empty() {
        bail!("no source images for operator initialisation");
    }
    Ok((prepare_init_sources(&images, &config.init)?, origin))
}

fn run_init(
    model: &mut RetouchModel<f32>,
    sources: &[neurop::numerics::Tensor<f32>],
    config: &Config,
) -> Result<()> {
    for (kind, report) in init_model_operators(model, sources, &config.init)? {
        let tail = &report.history[report.history.len().saturating_sub(100)..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        println!("{kind:<15} final sampled loss {mean:.5}");
    }
    Ok(())
}

fn init_ops(cli: &Cli, config: &Config, a: &InitOpsArgs) -> Result<()> {
    let (mut model, mut meta, _) = cli.model(config)?;
    let (sources, origin) = init_sources(config, a.data.as_deref(), a.synthetic)?;
    run_init(&mut model, &sources, config)?;
    meta.provenance.insert("init_sources".into(), origin);
    meta.provenance
        .insert("init_iterations".into(), config.init.iterations.to_string());
    meta.provenance
        .insert("preset".into(), config.preset.to_string());
    save_weights(&a.out, &model, &meta, None)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label:<12} {:>8.3} {:>8.4} {:>8.3}",
        m.psnr, m.ssim, m.delta_e
    );
}

fn evaluate_pairs(
    model: &RetouchModel<f32>,
    pairs: &[ImagePair],
    verbose: bool,
) -> Result<Metrics> {
    if pairs.is_empty() {
        bail!("dataset is empty");
    }
    println!("{:<12} {:>8} {:>8} {:>8}", "image", "psnr", "ssim", "dE");
    let mut all = Vec::with_capacity(pairs.len());
    for p in pairs {
        let m = evaluate(&model.retouch(&p.input)?.output, &p.target)?;
        if verbose {
            print_metrics(&p.id, &m);
        }
        all.push(m);
    }
    let mean = mean_metrics(&all);
    print_metrics("mean", &mean);
    Ok(mean)
}

fn train(cli: &Cli, config: &Config, a: &TrainArgs) -> Result<()> {
    let mut cfg = config.train.clone();
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if cfg.checkpoint_path.is_none() && cfg.checkpoint_every > 0 {
        cfg.checkpoint_path = Some(a.out.with_extension("ckpt"));
    }
    let (mut model, mut meta, state) = cli.model(config)?;
    let data = load_pair_dataset(&a.data, Split::Train)
        .with_context(|| format!("loading {}", a.data.display()))?;
    let test = a
        .test
        .as_deref()
        .map(|t| load_pair_dataset(t, Split::Test))
        .transpose()?;

    if cli.weights.is_none() && cfg.init_mode.uses_init() {
        let images: Vec<_> = data.pairs.iter().map(|p| p.input.clone()).collect();
        let sources = prepare_init_sources(&images, &config.init)?;
        run_init(&mut model, &sources, config)?;
    }
    if cfg.init_mode == InitMode::Random && cli.weights.is_some() {
        eprintln!("note: init_mode = random but --weights given; training starts from the file");
    }
    if let Some(t) = &test {
        println!("before training:");
        evaluate_pairs(&model, &t.pairs, false)?;
    }
    let resume = if a.resume {
        Some(state.context("--resume needs a weight file with optimizer state")?)
    } else {
        None
    };
    let report = train_joint(&mut model, &data.pairs, &cfg, resume)?;
    println!(
        "trained to iteration {}; mean loss over the last 500 steps {:.5}",
        report.final_iteration,
        report.trailing_mean(500)
    );
    if let Some(t) = &test {
        println!("after training:");
        evaluate_pairs(&model, &t.pairs, false)?;
    }
    let prov: BTreeMap<String, String> = [
        ("train_data", a.data.display().to_string()),
        ("train_iterations", report.final_iteration.to_string()),
        ("init_mode", format!("{:?}", cfg.init_mode)),
        ("preset", config.preset.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    meta.provenance.extend(prov);
    meta.seed = Some(cfg.seed);
    save_weights(&a.out, &model, &meta, None)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn infer(cli: &Cli, config: &Config, a: &InferArgs) -> Result<()> {
    let (model, _, _) = cli.model(config)?;
    let img = load_image(&a.image)?;
    let result = match &a.strengths {
        Some(s) => model.replay(&img, s)?,
        None => model.retouch(&img)?,
    };
    let depth = if a.bit_depth == 16 {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    };
    save_image(&a.out, &result.output, depth)?;
    if let Some(dir) = &a.emit_intermediates {
        std::fs::create_dir_all(dir)?;
        for (k, im) in result.intermediates.iter().enumerate() {
            save_image(&dir.join(format!("step{}.png", k + 1)), im, depth)?;
        }
    }
    let s: Vec<String> = result.strengths.iter().map(|v| v.to_string()).collect();
    println!("strengths {}", s.join(","));
    Ok(())
}

fn eval(cli: &Cli, config: &Config, a: &EvalArgs) -> Result<()> {
    let (model, _, _) = cli.model(config)?;
    let ds = load_pair_dataset(&a.dataset, Split::Test)?;
    evaluate_pairs(&model, &ds.pairs, true)?;
    Ok(())
}

fn serve(cli: &Cli, config: &Config, a: &ServeArgs) -> Result<()> {
    let port = match a.port {
        Some(p) => p,
        None => match std::env::var("NEUROP_PORT") {
            Ok(s) => s
                .parse()
                .with_context(|| format!("NEUROP_PORT={s:?} is not a port"))?,
            Err(_) => 8080,
        },
    };
    let (model, _, _) = cli.model(config)?;
    let settings = server::Settings {
        preview_edge: a.preview_edge,
        max_upload_bytes: a.max_upload_mb * 1024 * 1024,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(model, settings, (a.host.as_str(), port)))
}

fn synth(config: &Config, a: &SynthArgs) -> Result<()> {
    let pairs = synthetic_pairs(a.count, a.size, config.train.seed)?;
    let strengths: BTreeMap<&str, [f32; 3]> =
        pairs.iter().map(|p| (p.id.as_str(), p.strengths)).collect();
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(
        a.out.join("strengths.json"),
        serde_json::to_string_pretty(&strengths)?,
    )?;
    let pairs = pairs
        .into_iter()
        .map(|p| ImagePair::new(p.id, p.input, p.target, None))
        .collect::<neurop::Result<Vec<_>>>()?;
    save_pair_dataset(&a.out, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}
