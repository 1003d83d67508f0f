use super::dataset::TrainSample;
use super::train::{alpha_for, train, AdamConfig, TrainerState};
use crate::error::{Error, Result};
use crate::hypernet::HyperNet;
use crate::image::Image;
use crate::metrics::{bicubic_resample, psnr};
use crate::targetnet::{render, ThetaVector};

/// Largest image side accepted by the single-image fit.
pub const MAX_OVERFIT_SIDE: usize = 64;

/// Steps between reconstruction checks when stopping early.
pub const CHECK_EVERY: u64 = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverfitOptions {
    pub steps: u64,
    pub lr: f32,
    pub seed: u64,
    /// Stop once the reconstruction reaches this PSNR (checked every
    /// [`CHECK_EVERY`] steps); `steps` stays the upper bound.
    pub stop_at: Option<f64>,
}

impl Default for OverfitOptions {
    fn default() -> Self {
        OverfitOptions {
            steps: 5000,
            lr: 1e-4,
            seed: 0,
            stop_at: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OverfitReport {
    pub theta: ThetaVector,
    /// Render at the image's own resolution versus the image.
    pub psnr: f64,
    /// Loss before each step.
    pub losses: Vec<f32>,
    pub state: TrainerState,
}

/// θ for `sample` and the PSNR of its render at the sample's own size.
fn reconstruct(state: &TrainerState, sample: &TrainSample) -> Result<(ThetaVector, f64)> {
    let theta = state.net.predict_theta(&sample.lr_patch, &state.phi)?;
    let alpha = state.net.target().scale_input.then(|| alpha_for(1.0));
    let (h, w) = sample.hr_patch.dims();
    let rendered = render(&theta, h, w, alpha)?;
    let psnr = psnr(&rendered, &sample.hr_patch)?;
    Ok((theta, psnr))
}

/// The single training sample used to fit `image`: the image itself as the
/// target, resampled to the hypernetwork's patch size as the input.
pub fn single_sample(net: &HyperNet, image: &Image) -> Result<TrainSample> {
    let (h, w) = image.dims();
    if h > MAX_OVERFIT_SIDE || w > MAX_OVERFIT_SIDE || h * w < 2 {
        return Err(Error::Precondition(format!(
            "single-image fit takes images up to {MAX_OVERFIT_SIDE}x{MAX_OVERFIT_SIDE}, got {h}x{w}"
        )));
    }
    let hr = image.to_rgb();
    let p = net.config().patch_size;
    Ok(TrainSample {
        lr_patch: bicubic_resample(&hr, p, p)?,
        hr_patch: hr,
        scale: 1,
        source: "image".into(),
        origin: (0, 0),
    })
}

pub fn overfit_with(net: HyperNet, image: &Image, opts: &OverfitOptions) -> Result<OverfitReport> {
    let sample = single_sample(&net, image)?;
    let mut state = TrainerState::new(net, opts.seed, AdamConfig::with_lr(opts.lr));
    let mut losses = Vec::with_capacity(opts.steps as usize);
    let chunk = if opts.stop_at.is_some() { CHECK_EVERY } else { opts.steps.max(1) };
    while state.step < opts.steps {
        let n = chunk.min(opts.steps - state.step);
        losses.extend(train(&mut state, std::slice::from_ref(&sample), 1, n, |s, loss| {
            if s.step % 500 == 0 {
                log::info!("overfit step {}: loss {loss:.6}", s.step);
            }
            Ok(())
        })?);
        if let Some(goal) = opts.stop_at {
            let (_, p) = reconstruct(&state, &sample)?;
            if p >= goal {
                log::info!("overfit reached {p:.2} dB at step {}", state.step);
                break;
            }
        }
    }
    let (theta, psnr) = reconstruct(&state, &sample)?;
    Ok(OverfitReport {
        theta,
        psnr,
        losses,
        state,
    })
}

/// Fits the default model to `image` alone and returns the final θ.
pub fn overfit_single(image: &Image, steps: u64) -> Result<ThetaVector> {
    let opts = OverfitOptions {
        steps,
        ..OverfitOptions::default()
    };
    let report = overfit_with(HyperNet::default_model(), image, &opts)?;
    log::info!("overfit finished: {:.2} dB after {steps} steps", report.psnr);
    Ok(report.theta)
}
