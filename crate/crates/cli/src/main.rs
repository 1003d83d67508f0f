use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyperpix::imageio::{decode_image, encode_image, write_atomic, Format};
use hyperpix::metrics::{bicubic_resample, evaluate_dirs, Convention, EvalOptions};
use hyperpix::pipeline::{
    ingest_dataset, load_checkpoint, save_checkpoint, train, AdamConfig, IngestOptions, TrainConfig, TrainerState,
};
use hyperpix::superres::{upscale, Scale, UpscaleOptions, DEFAULT_STRIDE};
use hyperpix::targetnet::render;
use hyperpix::weightgeo::{interpolation_strip, ladder, write_strip, InterpolationMode, InterpolationSpec};
use hyperpix::{Error, HyperNet, HyperNetConfig, Result, TargetNetConfig, ThetaVector};

/// Functional image representation with a hypernetwork.
///
/// Set HYPERPIX_LOG (error, warn, info, debug, trace) to control logging.
#[derive(Debug, Parser)]
#[command(name = "hyperpix", version)]
struct Cli {
    /// Worker threads for per-patch and per-image parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a hypernetwork from a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config step count.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Predict the target-network weights of an image patch.
    Encode {
        image: PathBuf,
        #[command(flatten)]
        phi: PhiArg,
        /// Output weight file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render target-network weights on a pixel grid.
    Render {
        theta: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Scale the grid represents, for scale-aware networks.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Up-scale an image by any factor >= 1, e.g. 2, 3.5 or 2.5x1 (width x height).
    Upscale {
        image: PathBuf,
        #[arg(long)]
        scale: Scale,
        #[command(flatten)]
        phi: PhiArg,
        /// Patch stride in low-resolution pixels.
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate between the weights encoding two images.
    Interpolate {
        image_a: PathBuf,
        image_b: PathBuf,
        #[command(flatten)]
        phi: PhiArg,
        /// Number of frames, endpoints included.
        #[arg(long, default_value_t = 11)]
        steps: usize,
        /// full or layerwise:<i> (only the first i layers move).
        #[arg(long, default_value = "full")]
        mode: InterpolationMode,
        /// Render size; defaults to the patch size.
        #[arg(long)]
        size: Option<usize>,
        /// Output directory for frames and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score bicubic and hypernetwork up-scaling on directories of images.
    Evaluate {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[command(flatten)]
        phi: PhiArg,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        scales: Vec<u32>,
        /// rgb or y-border.
        #[arg(long, default_value = "rgb")]
        convention: Convention,
        /// Output table (tab-separated).
        #[arg(long)]
        out: PathBuf,
    },
    /// Bicubic resize, for comparison.
    Baseline {
        image: PathBuf,
        #[arg(long)]
        scale: Scale,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct PhiArg {
    /// Trained hypernetwork checkpoint.
    #[arg(long = "phi")]
    path: PathBuf,
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")))
    }
}

/// The directory an output will be written into must already exist.
fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => require_dir(p),
        _ => Ok(()),
    }
}

fn require_image_output(path: &Path) -> Result<()> {
    Format::from_path(path)?;
    require_parent(path)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train { config, seed, steps } => run_train(&config, seed, steps),
        Command::Encode { image, phi, out } => {
            require_file(&image)?;
            require_file(&phi.path)?;
            require_parent(&out)?;
            let state = load_checkpoint(&phi.path)?;
            let img = decode_image(&image)?;
            let p = state.net.config().patch_size;
            let patch = if img.height() == p && img.width() == p {
                img
            } else {
                log::info!("resampling {}x{} input to the {p}x{p} patch size", img.height(), img.width());
                bicubic_resample(&img, p, p)?
            };
            state.net.predict_theta(&patch, &state.phi)?.save(&out)
        }
        Command::Render {
            theta,
            rows,
            cols,
            scale,
            out,
        } => {
            require_file(&theta)?;
            require_image_output(&out)?;
            let theta = ThetaVector::load(&theta)?;
            let alpha = theta.config().scale_input.then(|| Scale::uniform(scale).map(|s| s.alpha())).transpose()?;
            encode_image(&render(&theta, rows, cols, alpha)?, &out)
        }
        Command::Upscale {
            image,
            scale,
            phi,
            stride,
            out,
        } => {
            require_file(&image)?;
            require_file(&phi.path)?;
            require_image_output(&out)?;
            let state = load_checkpoint(&phi.path)?;
            let img = decode_image(&image)?;
            let result = upscale(&state.net, &state.phi, &img, scale, UpscaleOptions { stride })?;
            encode_image(&result, &out)
        }
        Command::Interpolate {
            image_a,
            image_b,
            phi,
            steps,
            mode,
            size,
            out,
        } => {
            require_file(&image_a)?;
            require_file(&image_b)?;
            require_file(&phi.path)?;
            require_parent(&out)?;
            if steps < 2 {
                return Err(Error::Config("interpolation needs at least 2 steps".into()));
            }
            let state = load_checkpoint(&phi.path)?;
            let p = state.net.config().patch_size;
            let encode = |path: &Path| -> Result<ThetaVector> {
                let img = decode_image(path)?;
                let img = if img.height() == p && img.width() == p {
                    img
                } else {
                    bicubic_resample(&img, p, p)?
                };
                state.net.predict_theta(&img, &state.phi)
            };
            let spec = InterpolationSpec::new(encode(&image_a)?, encode(&image_b)?, ladder(steps), mode)?;
            let side = size.unwrap_or(p);
            let frames = interpolation_strip(&spec, side, side)?;
            write_strip(&out, &frames, spec.lambdas(), Format::Png)?;
            Ok(())
        }
        Command::Evaluate {
            datasets,
            phi,
            scales,
            convention,
            out,
        } => {
            for d in &datasets {
                require_dir(d)?;
            }
            require_file(&phi.path)?;
            require_parent(&out)?;
            let state = load_checkpoint(&phi.path)?;
            let opts = EvalOptions {
                convention,
                upscale: UpscaleOptions::default(),
            };
            let table = evaluate_dirs(&state.net, &state.phi, &datasets, &scales, &opts)?;
            write_atomic(&out, table.to_tsv().as_bytes())?;
            print!("{}", table.layout());
            Ok(())
        }
        Command::Baseline { image, scale, out } => {
            require_file(&image)?;
            require_image_output(&out)?;
            let img = decode_image(&image)?;
            let (h, w) = scale.output_dims(img.height(), img.width());
            encode_image(&bicubic_resample(&img, h, w)?, &out)
        }
    }
}

fn run_train(config_path: &Path, seed: Option<u64>, steps: Option<u64>) -> Result<()> {
    require_file(config_path)?;
    let mut config = TrainConfig::load(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(s) = steps {
        config.steps = s;
    }
    config.validate()?;
    let dataset = config
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("config has no dataset".into()))?;
    let checkpoint = config
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("config has no checkpoint path".into()))?;
    require_dir(&dataset)?;
    require_parent(&checkpoint)?;

    let samples = ingest_dataset(
        &dataset,
        &IngestOptions {
            patch: config.patch,
            scales: config.scales.clone(),
            stride: config.stride,
        },
    )?;
    log::info!("{} training samples from {}", samples.len(), dataset.display());
    let target = if config.scale_input {
        TargetNetConfig::with_scale_input()
    } else {
        TargetNetConfig::default()
    };
    let net = HyperNet::new(HyperNetConfig::for_patch(&target, config.patch), target)?;
    let mut state = TrainerState::new(net, config.seed, AdamConfig::with_lr(config.lr));
    let mut window = Vec::new();
    train(&mut state, &samples, config.batch, config.steps, |s, loss| {
        window.push(loss);
        if config.log_every > 0 && s.step % config.log_every == 0 {
            let mean = window.iter().sum::<f32>() / window.len() as f32;
            log::info!("step {} loss {mean:.6}", s.step);
            window.clear();
        }
        if config.save_every > 0 && s.step % config.save_every == 0 {
            save_checkpoint(s, &checkpoint)?;
        }
        Ok(())
    })?;
    save_checkpoint(&state, &checkpoint)?;
    println!("trained {} steps; checkpoint {}", state.step, checkpoint.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYPERPIX_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
