//! Image quality metrics and the bicubic resampler shared by dataset
//! preparation and the baseline.

mod bicubic;
mod evaluate;
mod quality;

pub use bicubic::{bicubic_resample, bicubic_resample_with, BicubicKernel};
pub use evaluate::{evaluate_dirs, mod_crop, EvalOptions, ScoreRow, ScoreTable, BICUBIC, HYPERNET};

pub use quality::{luminance, psnr, psnr_planes, score, ssim, ssim_planes, studio_y, Convention, Plane, SsimParams};
