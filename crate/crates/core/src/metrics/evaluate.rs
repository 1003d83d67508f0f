//! Benchmark protocol: downscale each high-resolution image, bring it back
//! with bicubic and with the hypernetwork, and score both against the
//! original.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{bicubic_resample, score, Convention};
use crate::error::{Error, Result};
use crate::hypernet::{HyperNet, PhiParameters};
use crate::image::Image;
use crate::pipeline::load_images;
use crate::superres::{upscale, Scale, UpscaleOptions};

pub const BICUBIC: &str = "bicubic";
pub const HYPERNET: &str = "hypernet";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub convention: Convention,
    pub upscale: UpscaleOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub dataset: String,
    pub image: String,
    pub scale: u32,
    pub method: &'static str,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub convention: Convention,
    pub rows: Vec<ScoreRow>,
}

/// Crops `image` so both sides are multiples of `scale`.
pub fn mod_crop(image: &Image, scale: u32) -> Result<Image> {
    let s = scale as usize;
    let (h, w) = (image.height() / s * s, image.width() / s * s);
    if h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "{}x{} image is smaller than scale {scale}",
            image.height(),
            image.width()
        )));
    }
    image.crop(0, 0, h, w)
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

impl ScoreTable {
    /// Mean PSNR and SSIM per key, in key order.
    fn means<K: Ord>(&self, key: impl Fn(&ScoreRow) -> K) -> Vec<(K, f64, f64)> {
        let mut groups: BTreeMap<K, Vec<&ScoreRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry(key(r)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|(k, rows)| {
                let psnr = mean(rows.iter().map(|r| r.psnr));
                let ssim = mean(rows.iter().map(|r| r.ssim));
                (k, psnr, ssim)
            })
            .collect()
    }

    /// Mean over every image and scale of one (dataset, method) pair.
    pub fn summary(&self) -> Vec<(String, &'static str, f64, f64)> {
        self.means(|r| (r.dataset.clone(), r.method))
            .into_iter()
            .map(|((d, m), p, s)| (d, m, p, s))
            .collect()
    }

    /// Mean PSNR and SSIM of `method` on `dataset` at `scale`.
    pub fn mean_of(&self, dataset: &str, scale: u32, method: &str) -> Option<(f64, f64)> {
        let rows: Vec<&ScoreRow> = self
            .rows
            .iter()
            .filter(|r| r.dataset == dataset && r.scale == scale && r.method == method)
            .collect();
        (!rows.is_empty()).then(|| (mean(rows.iter().map(|r| r.psnr)), mean(rows.iter().map(|r| r.ssim))))
    }

    /// Tab-separated rows followed by one summary row per (dataset, method).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# convention: {} ({})", self.convention.name(), self.convention.describe());
        out.push_str("# summary rows have image \"mean\" and scale \"all\"\n");
        out.push_str("dataset\timage\tscale\tmethod\tpsnr_db\tssim\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}",
                r.dataset,
                r.image,
                r.scale,
                r.method,
                format_db(r.psnr),
                r.ssim
            );
        }
        for (dataset, method, psnr, ssim) in self.summary() {
            let _ = writeln!(out, "{dataset}\tmean\tall\t{method}\t{}\t{ssim:.6}", format_db(psnr));
        }
        out
    }

    /// Means laid out with one row per dataset and scale and one column per
    /// method, each cell "PSNR / SSIM".
    pub fn layout(&self) -> String {
        let cells = self.means(|r| (r.dataset.clone(), r.scale, r.method));
        let mut by_row: BTreeMap<(String, u32), BTreeMap<&str, (f64, f64)>> = BTreeMap::new();
        for ((d, s, m), p, ss) in cells {
            by_row.entry((d, s)).or_default().insert(m, (p, ss));
        }
        let methods = [BICUBIC, HYPERNET];
        let mut out = format!("{:<12} {:>5}", "dataset", "scale");
        for m in methods {
            let _ = write!(out, " {m:>18}");
        }
        out.push('\n');
        for ((d, s), cols) in by_row {
            let _ = write!(out, "{d:<12} {:>5}", format!("x{s}"));
            for m in methods {
                let cell = cols
                    .get(m)
                    .map_or("-".to_string(), |(p, ss)| format!("{} / {ss:.4}", format_db(*p)));
                let _ = write!(out, " {cell:>18}");
            }
            out.push('\n');
        }
        out
    }
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Scores of both methods for one high-resolution image at one scale.
fn score_image(
    net: &HyperNet,
    phi: &PhiParameters,
    hr: &Image,
    scale: u32,
    opts: &EvalOptions,
) -> Result<[(f64, f64); 2]> {
    let hr = mod_crop(&hr.to_rgb(), scale)?;
    let s = scale as usize;
    let (h, w) = (hr.height(), hr.width());
    let lr = bicubic_resample(&hr, h / s, w / s)?;
    let border = if opts.convention == Convention::YBorder { s } else { 0 };
    let baseline = bicubic_resample(&lr, h, w)?;
    let ours = upscale(net, phi, &lr, Scale::uniform(f64::from(scale))?, opts.upscale)?;
    Ok([
        score(&hr, &baseline, opts.convention, border)?,
        score(&hr, &ours, opts.convention, border)?,
    ])
}

/// Evaluates every decodable image of every directory at every scale.
/// Rows are ordered by dataset, image name, scale, then method.
pub fn evaluate_dirs(
    net: &HyperNet,
    phi: &PhiParameters,
    dirs: &[PathBuf],
    scales: &[u32],
    opts: &EvalOptions,
) -> Result<ScoreTable> {
    if scales.iter().any(|&s| s == 0) {
        return Err(Error::Config("scales must be positive".into()));
    }
    let mut jobs = Vec::new();
    for dir in dirs {
        let dataset = dataset_name(dir);
        for (name, image) in load_images(dir)? {
            for &s in scales {
                jobs.push((dataset.clone(), name.clone(), image.clone(), s));
            }
        }
    }
    let scored: Vec<[(f64, f64); 2]> = jobs
        .par_iter()
        .map(|(dataset, name, image, s)| {
            log::info!("evaluating {dataset}/{name} at x{s}");
            score_image(net, phi, image, *s, opts)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(jobs.len() * 2);
    for ((dataset, image, _, scale), scores) in jobs.into_iter().zip(scored) {
        for (method, (psnr, ssim)) in [BICUBIC, HYPERNET].into_iter().zip(scores) {
            rows.push(ScoreRow {
                dataset: dataset.clone(),
                image: image.clone(),
                scale,
                method,
                psnr,
                ssim,
            });
        }
    }
    Ok(ScoreTable {
        convention: opts.convention,
        rows,
    })
}
