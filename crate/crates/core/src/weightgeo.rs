//! Weight-space geometry: interpolating between two target networks,
//! either over all parameters or only over the first few layers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::imageio::{encode_image, write_atomic, Format};
use crate::targetnet::{self, ThetaVector};

/// Number of λ values in the default ladder, endpoints included.
pub const DEFAULT_STEPS: usize = 11;

pub const MANIFEST_NAME: &str = "manifest.txt";

fn check_pair(a: &ThetaVector, b: &ThetaVector) -> Result<()> {
    if a.config() != b.config() {
        return Err(Error::Config(
            "cannot interpolate between target networks of different configurations".into(),
        ));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Precondition(format!("interpolation weight {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 − λ)·a + λ·b`, evaluated in f64. Exact at both endpoints.
fn mix(a: &[f32], b: &[f32], lambda: f64, out: &mut [f32]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = ((1.0 - lambda) * f64::from(x) + lambda * f64::from(y)) as f32;
    }
}

pub fn lerp_theta(a: &ThetaVector, b: &ThetaVector, lambda: f64) -> Result<ThetaVector> {
    check_pair(a, b)?;
    check_lambda(lambda)?;
    let mut values = a.values().to_vec();
    mix(a.values(), b.values(), lambda, &mut values);
    ThetaVector::new(a.config().clone(), values)
}

/// Interpolates layers `1..=layers` (weights, bias and normalization affine
/// together) and copies the remaining layers from `a`.
pub fn lerp_layerwise(a: &ThetaVector, b: &ThetaVector, lambda: f64, layers: usize) -> Result<ThetaVector> {
    check_pair(a, b)?;
    check_lambda(lambda)?;
    let layout = a.config().layers();
    if layers == 0 || layers > layout.len() {
        return Err(Error::Precondition(format!(
            "layer count {layers} outside 1..={}",
            layout.len()
        )));
    }
    let mut values = a.values().to_vec();
    for l in &layout[..layers] {
        let r = l.range();
        mix(&a.values()[r.clone()], &b.values()[r.clone()], lambda, &mut values[r]);
    }
    ThetaVector::new(a.config().clone(), values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpolationMode {
    Full,
    /// Only the first `i` layers move.
    Layerwise(usize),
}

impl fmt::Display for InterpolationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpolationMode::Full => f.write_str("full"),
            InterpolationMode::Layerwise(i) => write!(f, "layerwise:{i}"),
        }
    }
}

impl FromStr for InterpolationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(InterpolationMode::Full);
        }
        s.strip_prefix("layerwise:")
            .and_then(|i| i.parse().ok())
            .map(InterpolationMode::Layerwise)
            .ok_or_else(|| Error::Config(format!("invalid mode {s:?}: expected full or layerwise:<i>")))
    }
}

/// `steps` evenly spaced values from 0 to 1 inclusive.
pub fn ladder(steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n)
            .map(|k| if k == n - 1 { 1.0 } else { k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

#[derive(Clone, Debug)]
pub struct InterpolationSpec {
    theta_a: ThetaVector,
    theta_b: ThetaVector,
    lambdas: Vec<f64>,
    mode: InterpolationMode,
}

impl InterpolationSpec {
    pub fn new(theta_a: ThetaVector, theta_b: ThetaVector, lambdas: Vec<f64>, mode: InterpolationMode) -> Result<Self> {
        check_pair(&theta_a, &theta_b)?;
        if lambdas.is_empty() {
            return Err(Error::Precondition("no interpolation weights".into()));
        }
        for &l in &lambdas {
            check_lambda(l)?;
        }
        if lambdas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Precondition("interpolation weights must be ascending".into()));
        }
        if let InterpolationMode::Layerwise(i) = mode {
            let n = theta_a.config().num_layers();
            if i == 0 || i > n {
                return Err(Error::Precondition(format!("layer count {i} outside 1..={n}")));
            }
        }
        Ok(InterpolationSpec {
            theta_a,
            theta_b,
            lambdas,
            mode,
        })
    }

    /// Full interpolation over the default ladder.
    pub fn full(theta_a: ThetaVector, theta_b: ThetaVector) -> Result<Self> {
        Self::new(theta_a, theta_b, ladder(DEFAULT_STEPS), InterpolationMode::Full)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn mode(&self) -> InterpolationMode {
        self.mode
    }

    pub fn theta_at(&self, lambda: f64) -> Result<ThetaVector> {
        match self.mode {
            InterpolationMode::Full => lerp_theta(&self.theta_a, &self.theta_b, lambda),
            InterpolationMode::Layerwise(i) => lerp_layerwise(&self.theta_a, &self.theta_b, lambda, i),
        }
    }
}

/// Renders the interpolated networks at `rows x cols`, in λ order. A
/// scale-aware target is rendered at α for ×1.
pub fn interpolation_strip(spec: &InterpolationSpec, rows: usize, cols: usize) -> Result<Vec<Image>> {
    let alpha = spec.theta_a.config().scale_input.then_some(0.25);
    spec.lambdas
        .par_iter()
        .map(|&l| targetnet::render(&spec.theta_at(l)?, rows, cols, alpha))
        .collect()
}

/// Elementwise `(1 − λ)·a + λ·b` of two images of equal size.
pub fn pixel_lerp(a: &Image, b: &Image, lambda: f64) -> Result<Image> {
    check_lambda(lambda)?;
    if !a.same_dims(b) {
        return Err(Error::Dimension(format!(
            "cannot blend {}x{}x{} with {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let mut data = vec![0.0; a.data().len()];
    mix(a.data(), b.data(), lambda, &mut data);
    Image::new(a.height(), a.width(), a.channels(), data)
}

/// Writes `frames` as `strip_NNN.<ext>` under `dir` plus a manifest listing
/// each file with its λ. Returns the written image paths.
pub fn write_strip(dir: &Path, frames: &[Image], lambdas: &[f64], format: Format) -> Result<Vec<PathBuf>> {
    if frames.len() != lambdas.len() {
        return Err(Error::Precondition(format!(
            "{} frames for {} interpolation weights",
            frames.len(),
            lambdas.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("# file\tlambda\n");
    let mut paths = Vec::with_capacity(frames.len());
    for (k, (img, l)) in frames.iter().zip(lambdas).enumerate() {
        let name = format!("strip_{k:03}.{}", format.extension());
        let path = dir.join(&name);
        encode_image(img, &path)?;
        manifest.push_str(&format!("{name}\t{l}\n"));
        paths.push(path);
    }
    let manifest_path = dir.join(MANIFEST_NAME);
    write_atomic(&manifest_path, manifest.as_bytes())?;
    Ok(paths)
}
