use crate::error::{Error, Result};

/// `height x width x channels` intensities in `[0, 1]`, row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Dimension(format!(
                "image must be non-empty with 1 or 3 channels, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image::new(height, width, channels, vec![value; height * width * channels])
            .expect("filled image dimensions")
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Image::new(height, width, channels, data).expect("from_fn image dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, self.channels, |r, c, ch| {
            self.get(row + r, col + c, ch)
        }))
    }

    /// Replicates a single channel into RGB; RGB images are returned as is.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image::from_fn(self.height, self.width, 3, |r, c, _| self.get(r, c, 0))
    }

    /// Channel-planar `[C, H, W]` copy.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if !self.same_dims(other) {
            return Err(Error::Dimension(format!(
                "cannot compare {}x{}x{} with {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}
