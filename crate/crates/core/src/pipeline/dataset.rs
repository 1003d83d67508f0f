use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::imageio::decode_image;
use crate::metrics::bicubic_resample;

/// A hypernetwork input and the high-resolution patch it should render.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    /// `P x P` RGB input.
    pub lr_patch: Image,
    /// `sP x sP` RGB supervision target.
    pub hr_patch: Image,
    pub scale: u32,
    /// Source file name and the HR crop's top-left corner, for diagnostics.
    pub source: String,
    pub origin: (usize, usize),
}

impl TrainSample {
    /// Pairs `hr` (side `scale * P`) with its bicubic downscale to `P`.
    pub fn from_hr(hr: Image, scale: u32, patch: usize, source: impl Into<String>, origin: (usize, usize)) -> Result<Self> {
        let side = scale as usize * patch;
        if hr.dims() != (side, side) || scale == 0 {
            return Err(Error::Dimension(format!(
                "HR patch is {}x{}, expected {side}x{side} for scale {scale}",
                hr.height(),
                hr.width()
            )));
        }
        let hr = hr.to_rgb();
        let lr_patch = bicubic_resample(&hr, patch, patch)?;
        Ok(TrainSample {
            lr_patch,
            hr_patch: hr,
            scale,
            source: source.into(),
            origin,
        })
    }

    /// Checks that the LR patch is the bicubic downscale of the HR patch.
    pub fn is_consistent(&self) -> bool {
        let p = self.lr_patch.height();
        self.hr_patch.height() == p * self.scale as usize
            && bicubic_resample(&self.hr_patch, p, p).is_ok_and(|lr| lr == self.lr_patch)
    }

    pub fn label(&self) -> String {
        format!("{}@{},{}x{}", self.source, self.origin.0, self.origin.1, self.scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub patch: usize,
    pub scales: Vec<u32>,
    /// Lattice step in LR pixels; HR crops step by `scale * stride`.
    pub stride: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            patch: 32,
            scales: vec![2, 3, 4],
            stride: 32,
        }
    }
}

fn lattice(extent: usize, crop: usize, step: usize) -> impl Iterator<Item = usize> {
    (0..).map(move |k| k * step).take_while(move |&p| p + crop <= extent)
}

/// Deterministic samples for `images` (already sorted by name).
///
/// Each scale gets its own crop lattice over all images; the per-scale
/// lists are then interleaved round-robin so consecutive samples cycle
/// through the scales.
pub fn samples_from_images(images: &[(String, Image)], opts: &IngestOptions) -> Result<Vec<TrainSample>> {
    if opts.patch == 0 || opts.stride == 0 || opts.scales.is_empty() || opts.scales.contains(&0) {
        return Err(Error::Config(format!("invalid ingestion options {opts:?}")));
    }
    let mut per_scale: Vec<Vec<TrainSample>> = Vec::new();
    for &s in &opts.scales {
        let crop = s as usize * opts.patch;
        let step = s as usize * opts.stride;
        let mut list = Vec::new();
        for (name, img) in images {
            for r in lattice(img.height(), crop, step) {
                for c in lattice(img.width(), crop, step) {
                    let hr = img.crop(r, c, crop, crop)?;
                    list.push(TrainSample::from_hr(hr, s, opts.patch, name.clone(), (r, c))?);
                }
            }
        }
        per_scale.push(list);
    }
    let longest = per_scale.iter().map(Vec::len).max().unwrap_or(0);
    let mut iters: Vec<_> = per_scale.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::new();
    for _ in 0..longest {
        for it in &mut iters {
            out.extend(it.next());
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "no {}-pixel patches fit in any image at scales {:?}",
            opts.patch, opts.scales
        )));
    }
    Ok(out)
}

/// Decodable images in `dir`, sorted by file name. Undecodable files are
/// skipped with a warning.
pub fn load_images(dir: &Path) -> Result<Vec<(String, Image)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    paths.sort();
    let mut images = Vec::new();
    for path in paths {
        match decode_image(&path) {
            Ok(img) => {
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                images.push((name, img));
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    Ok(images)
}

pub fn ingest_dataset(dir: &Path, opts: &IngestOptions) -> Result<Vec<TrainSample>> {
    let images = load_images(dir)?;
    if images.is_empty() {
        return Err(Error::Dataset(format!("no decodable images in {}", dir.display())));
    }
    samples_from_images(&images, opts)
}
