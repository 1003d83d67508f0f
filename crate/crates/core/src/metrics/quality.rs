use crate::error::{Error, Result};
use crate::image::Image;

/// Which samples PSNR/SSIM are computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Convention {
    /// PSNR over every RGB sample in `[0, 1]`; SSIM on BT.601 luminance.
    #[default]
    Rgb,
    /// Both metrics on the studio-range Y channel (BT.601), with a border
    /// of `scale` pixels removed — the usual layout of super-resolution
    /// benchmark tables.
    YBorder,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Rgb => "rgb",
            Convention::YBorder => "y-border",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Convention::Rgb => "PSNR over RGB samples in [0,1]; SSIM on luminance 0.299R+0.587G+0.114B",
            Convention::YBorder => "PSNR and SSIM on BT.601 Y (16-235 range, scaled to [0,1]) with a scale-pixel border crop",
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Convention::Rgb),
            "y-border" => Ok(Convention::YBorder),
            other => Err(Error::Config(format!("unknown convention `{other}` (expected rgb or y-border)"))),
        }
    }
}

/// Single-channel `f64` view of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub fn luminance(image: &Image) -> Plane {
    plane_map(image, |p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
}

pub fn studio_y(image: &Image) -> Plane {
    plane_map(image, |p| (16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]) / 255.0)
}

fn plane_map(image: &Image, f: impl Fn([f64; 3]) -> f64) -> Plane {
    let ch = image.channels();
    let data = image
        .data()
        .chunks_exact(ch)
        .map(|p| {
            let rgb = if ch == 1 {
                [p[0] as f64; 3]
            } else {
                [p[0] as f64, p[1] as f64, p[2] as f64]
            };
            f(rgb)
        })
        .collect();
    Plane {
        height: image.height(),
        width: image.width(),
        data,
    }
}

impl Plane {
    pub fn crop_border(&self, border: usize) -> Result<Plane> {
        if 2 * border >= self.height || 2 * border >= self.width {
            return Err(Error::Dimension(format!(
                "border {border} leaves nothing of a {}x{} image",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height - 2 * border, self.width - 2 * border);
        let mut data = Vec::with_capacity(h * w);
        for r in border..border + h {
            data.extend_from_slice(&self.data[r * self.width + border..][..w]);
        }
        Ok(Plane { height: h, width: w, data })
    }
}

fn check_dims(x: &Image, y: &Image) -> Result<()> {
    if x.same_dims(y) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "metric operands differ: {}x{}x{} vs {}x{}x{}",
            x.height(),
            x.width(),
            x.channels(),
            y.height(),
            y.width(),
            y.channels()
        )))
    }
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio with peak 1.0 over all samples. Identical
/// images give `f64::INFINITY`.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    check_dims(x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / x.data().len() as f64))
}

pub fn psnr_planes(x: &Plane, y: &Plane) -> f64 {
    let sum: f64 = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum();
    psnr_from_mse(sum / x.data.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn kernel_1d(&self) -> Vec<f64> {
        let center = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Mean SSIM over valid window positions of the luminance channel.
pub fn ssim(x: &Image, y: &Image, params: &SsimParams) -> Result<f64> {
    check_dims(x, y)?;
    ssim_planes(&luminance(x), &luminance(y), params)
}

pub fn ssim_planes(x: &Plane, y: &Plane, params: &SsimParams) -> Result<f64> {
    let n = params.window;
    if x.height < n || x.width < n {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {n}x{n} pixels, got {}x{}",
            x.height, x.width
        )));
    }
    let k = params.kernel_1d();
    let filter = |f: &dyn Fn(usize) -> f64| valid_filter(x.height, x.width, &k, f);
    let mx = filter(&|i| x.data[i]);
    let my = filter(&|i| y.data[i]);
    let sxx = filter(&|i| x.data[i] * x.data[i]);
    let syy = filter(&|i| y.data[i] * y.data[i]);
    let sxy = filter(&|i| x.data[i] * y.data[i]);
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Separable correlation with `k` over valid positions only.
fn valid_filter(h: usize, w: usize, k: &[f64], value: &dyn Fn(usize) -> f64) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().enumerate().map(|(t, kv)| kv * value(r * w + c + t)).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(t, kv)| kv * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// PSNR and SSIM of `test` against `reference` under `convention`;
/// `border` is only used by [`Convention::YBorder`].
pub fn score(reference: &Image, test: &Image, convention: Convention, border: usize) -> Result<(f64, f64)> {
    check_dims(reference, test)?;
    let params = SsimParams::default();
    match convention {
        Convention::Rgb => Ok((psnr(reference, test)?, ssim(reference, test, &params)?)),
        Convention::YBorder => {
            let a = studio_y(reference).crop_border(border)?;
            let b = studio_y(test).crop_border(border)?;
            Ok((psnr_planes(&a, &b), ssim_planes(&a, &b, &params)?))
        }
    }
}
