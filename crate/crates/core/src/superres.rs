//! Continuous up-scaling: split the low-resolution input into overlapping
//! patches, predict one target network per patch, render each on its share
//! of the output grid and average the renders with tent weights.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypernet::{HyperNet, PhiParameters};
use crate::image::Image;
use crate::targetnet::{self, CoordGrid};

pub const DEFAULT_STRIDE: usize = 16;

/// Tent weight at the patch border, relative to 1 at the center.
pub const BLEND_FLOOR: f64 = 0.05;

/// Lattice of square patch placements covering an `height x width` image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchPlan {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub stride: usize,
    /// `(row, col)` of each patch's top-left pixel, row-major.
    pub placements: Vec<(usize, usize)>,
}

/// Offsets `0, stride, 2·stride, …` along one axis, with a final placement
/// pulled back to end exactly at the image edge.
fn axis_offsets(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut offsets: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + patch <= len).collect();
    let last = len - patch;
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

pub fn plan_patches(height: usize, width: usize, patch: usize, stride: usize) -> Result<PatchPlan> {
    if patch == 0 || patch > height || patch > width {
        return Err(Error::Planning(format!(
            "patch {patch} does not fit a {height}x{width} image"
        )));
    }
    if stride == 0 || stride > patch {
        return Err(Error::Planning(format!("stride {stride} must lie in 1..={patch}")));
    }
    let rows = axis_offsets(height, patch, stride);
    let cols = axis_offsets(width, patch, stride);
    let placements = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(PatchPlan {
        height,
        width,
        patch,
        stride,
        placements,
    })
}

/// Per-axis up-scaling factor. Parsed from `"2"`, `"2.5"` or `"WxH"`
/// (horizontal × vertical, as in "2.5x1").
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scale {
    pub y: f64,
    pub x: f64,
}

impl Scale {
    pub fn uniform(s: f64) -> Result<Self> {
        Self::new(s, s)
    }

    pub fn new(y: f64, x: f64) -> Result<Self> {
        for s in [y, x] {
            if !s.is_finite() || s < 1.0 {
                return Err(Error::Precondition(format!(
                    "scale factors must be finite and >= 1 (got {s}); use bicubic resampling to downscale"
                )));
            }
        }
        Ok(Scale { y, x })
    }

    /// Value fed to a scale-aware target network.
    pub fn alpha(&self) -> f32 {
        (self.y.max(self.x) / 4.0) as f32
    }

    /// Output size, rounding half up.
    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let round = |v: f64| (v + 0.5).floor() as usize;
        (round(self.y * height as f64), round(self.x * width as f64))
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.x == self.y {
            write!(f, "{}", self.x)
        } else {
            write!(f, "{}x{}", self.x, self.y)
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid scale {s:?}: expected S or WxH")))
        };
        match s.split_once(['x', 'X']) {
            Some((w, h)) => Scale::new(parse(h)?, parse(w)?),
            None => Scale::uniform(parse(s)?),
        }
    }
}

/// The block of output pixels one patch renders, with their centers in the
/// patch's `[0, 1]²` frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub ys: Vec<f64>,
    pub xs: Vec<f64>,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.ys.len()
    }

    pub fn cols(&self) -> usize {
        self.xs.len()
    }

    pub fn grid(&self) -> CoordGrid {
        CoordGrid::from_axes(&self.ys, &self.xs)
    }
}

/// Output pixels of one axis whose centers fall inside `[start, start + patch]`
/// (low-resolution units), as `(first index, frame coordinates)`.
fn axis_window(src_len: usize, out_len: usize, start: usize, patch: usize) -> (usize, Vec<f64>) {
    let step = src_len as f64 / out_len as f64;
    let mut first = None;
    let mut coords = Vec::new();
    for i in 0..out_len {
        let center = (i as f64 + 0.5) * step;
        if center >= start as f64 && center <= (start + patch) as f64 {
            first.get_or_insert(i);
            coords.push((center - start as f64) / patch as f64);
        }
    }
    (first.unwrap_or(0), coords)
}

/// Output windows of every placement, for an image of `src` size mapped onto
/// `out` pixels. `src` may be smaller than the plan (edge-padded inputs).
pub fn windows(plan: &PatchPlan, src: (usize, usize), out: (usize, usize)) -> Vec<Window> {
    plan.placements
        .iter()
        .map(|&(r, c)| {
            let (row0, ys) = axis_window(src.0, out.0, r, plan.patch);
            let (col0, xs) = axis_window(src.1, out.1, c, plan.patch);
            Window { row0, col0, ys, xs }
        })
        .collect()
}

fn tent(u: f64) -> f64 {
    BLEND_FLOOR + (1.0 - BLEND_FLOOR) * (1.0 - (2.0 * u - 1.0).abs()).max(0.0)
}

/// Normalized per-window weight maps; at every output pixel the weights of
/// the covering windows sum to one.
#[derive(Clone, Debug)]
pub struct BlendWeights {
    height: usize,
    width: usize,
    windows: Vec<Window>,
    maps: Vec<Vec<f64>>,
}

impl BlendWeights {
    pub fn new(windows: Vec<Window>, height: usize, width: usize) -> Result<Self> {
        let mut total = vec![0.0f64; height * width];
        let mut raw = Vec::with_capacity(windows.len());
        for w in &windows {
            if w.row0 + w.rows() > height || w.col0 + w.cols() > width {
                return Err(Error::Assembly(format!(
                    "window at ({}, {}) of {}x{} exceeds the {height}x{width} output",
                    w.row0,
                    w.col0,
                    w.rows(),
                    w.cols()
                )));
            }
            let tx: Vec<f64> = w.xs.iter().map(|&x| tent(x)).collect();
            let mut map = Vec::with_capacity(w.rows() * w.cols());
            for (i, &y) in w.ys.iter().enumerate() {
                let ty = tent(y);
                for (j, &t) in tx.iter().enumerate() {
                    let v = ty * t;
                    total[(w.row0 + i) * width + w.col0 + j] += v;
                    map.push(v);
                }
            }
            raw.push(map);
        }
        let gaps: Vec<(usize, usize)> = total
            .iter()
            .enumerate()
            .filter(|(_, &t)| t <= 0.0)
            .map(|(k, _)| (k / width, k % width))
            .collect();
        if !gaps.is_empty() {
            let shown: Vec<String> = gaps.iter().take(8).map(|(r, c)| format!("({r}, {c})")).collect();
            return Err(Error::Assembly(format!(
                "{} output pixels are not covered by any patch: {}{}",
                gaps.len(),
                shown.join(", "),
                if gaps.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        for (w, map) in windows.iter().zip(&mut raw) {
            for i in 0..w.rows() {
                let row = &total[(w.row0 + i) * width + w.col0..][..w.cols()];
                for (v, t) in map[i * w.cols()..][..w.cols()].iter_mut().zip(row) {
                    *v /= t;
                }
            }
        }
        Ok(BlendWeights {
            height,
            width,
            windows,
            maps: raw,
        })
    }

    /// Weights for every placement of `plan` when a `src`-sized image is
    /// mapped onto an `out`-sized one.
    pub fn for_plan(plan: &PatchPlan, src: (usize, usize), out: (usize, usize)) -> Result<Self> {
        Self::new(windows(plan, src, out), out.0, out.1)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    /// Normalized weights of window `k`, row-major over its block.
    pub fn map(&self, k: usize) -> &[f64] {
        &self.maps[k]
    }

    /// Sum of normalized weights at every output pixel.
    pub fn coverage(&self) -> Vec<f64> {
        let mut sum = vec![0.0f64; self.height * self.width];
        for (w, map) in self.windows.iter().zip(&self.maps) {
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    sum[(w.row0 + i) * self.width + w.col0 + j] += map[i * w.cols() + j];
                }
            }
        }
        sum
    }
}

/// Weighted average of per-window renders; `renders[k]` must match window
/// `k` in size.
pub fn blend(renders: &[Image], weights: &BlendWeights) -> Result<Image> {
    if renders.len() != weights.windows.len() {
        return Err(Error::Assembly(format!(
            "{} renders for {} windows",
            renders.len(),
            weights.windows.len()
        )));
    }
    let channels = renders.first().map_or(3, Image::channels);
    let (h, w) = weights.dims();
    let mut acc = vec![0.0f64; h * w * channels];
    for ((img, win), map) in renders.iter().zip(&weights.windows).zip(&weights.maps) {
        if img.height() != win.rows() || img.width() != win.cols() || img.channels() != channels {
            return Err(Error::Assembly(format!(
                "render of {}x{}x{} does not fit a {}x{}x{channels} window",
                img.height(),
                img.width(),
                img.channels(),
                win.rows(),
                win.cols()
            )));
        }
        for i in 0..win.rows() {
            for j in 0..win.cols() {
                let wt = map[i * win.cols() + j];
                let dst = ((win.row0 + i) * w + win.col0 + j) * channels;
                let src = (i * win.cols() + j) * channels;
                for ch in 0..channels {
                    acc[dst + ch] += wt * f64::from(img.data()[src + ch]);
                }
            }
        }
    }
    Image::new(h, w, channels, acc.into_iter().map(|v| v as f32).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpscaleOptions {
    pub stride: usize,
}

impl Default for UpscaleOptions {
    fn default() -> Self {
        UpscaleOptions { stride: DEFAULT_STRIDE }
    }
}

/// Replicates the last row/column until the image is at least `min` on
/// each side.
fn edge_pad(image: &Image, min: usize) -> Image {
    let (h, w) = (image.height().max(min), image.width().max(min));
    Image::from_fn(h, w, image.channels(), |r, c, ch| {
        image.get(r.min(image.height() - 1), c.min(image.width() - 1), ch)
    })
}

/// Up-scales `image` by `scale` with the hypernetwork `net`/`phi`.
pub fn upscale(net: &HyperNet, phi: &PhiParameters, image: &Image, scale: Scale, opts: UpscaleOptions) -> Result<Image> {
    net.check_params(phi)?;
    let patch = net.config().patch_size;
    let src = (image.height(), image.width());
    let out = scale.output_dims(src.0, src.1);
    let padded = if src.0 < patch || src.1 < patch {
        edge_pad(image, patch)
    } else {
        image.clone()
    };
    let plan = plan_patches(padded.height(), padded.width(), patch, opts.stride.min(patch))?;
    let weights = BlendWeights::for_plan(&plan, src, out)?;
    let alpha = net.target().scale_input.then(|| scale.alpha());
    log::debug!(
        "upscale {}x{} -> {}x{} with {} patches",
        src.0,
        src.1,
        out.0,
        out.1,
        plan.placements.len()
    );
    let renders = plan
        .placements
        .par_iter()
        .zip(weights.windows())
        .map(|(&(r, c), win)| {
            let lr = padded.crop(r, c, patch, patch)?;
            let theta = net.predict_theta(&lr, phi)?;
            targetnet::render_grid(&theta, &win.grid(), alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    blend(&renders, &weights)
}
