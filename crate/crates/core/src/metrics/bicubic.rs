use crate::error::{Error, Result};
use crate::image::Image;

/// Keys cubic convolution kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BicubicKernel {
    pub a: f64,
}

impl Default for BicubicKernel {
    fn default() -> Self {
        BicubicKernel { a: -0.5 }
    }
}

impl BicubicKernel {
    pub fn weight(&self, t: f64) -> f64 {
        let a = self.a;
        let t = t.abs();
        if t <= 1.0 {
            ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
        } else if t < 2.0 {
            ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
        } else {
            0.0
        }
    }

    /// Four taps `(source index, weight)` for output sample `dst` when
    /// resampling `src_len` samples to `dst_len`. Samples are aligned on
    /// pixel centers and out-of-range indices clamp to the edge.
    pub fn taps(&self, dst: usize, src_len: usize, dst_len: usize) -> [(usize, f64); 4] {
        let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
        let base = pos.floor();
        let last = src_len as isize - 1;
        std::array::from_fn(|k| {
            let idx = base as isize - 1 + k as isize;
            (idx.clamp(0, last) as usize, self.weight(pos - idx as f64))
        })
    }
}

fn tap_table(kernel: &BicubicKernel, src_len: usize, dst_len: usize) -> Vec<[(usize, f64); 4]> {
    (0..dst_len).map(|d| kernel.taps(d, src_len, dst_len)).collect()
}

/// Separable bicubic resampling to `out_h x out_w`, computed in `f64` and
/// clipped to `[0, 1]`. No anti-alias prefilter is applied when shrinking.
pub fn bicubic_resample(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    bicubic_resample_with(image, out_h, out_w, BicubicKernel::default())
}

pub fn bicubic_resample_with(image: &Image, out_h: usize, out_w: usize, kernel: BicubicKernel) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!("resample target {out_h}x{out_w} must be non-empty")));
    }
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let cols = tap_table(&kernel, w, out_w);
    let rows = tap_table(&kernel, h, out_h);
    let src = image.data();
    let mut horiz = vec![0.0f64; h * out_w * ch];
    for r in 0..h {
        for (oc, taps) in cols.iter().enumerate() {
            for c in 0..ch {
                horiz[(r * out_w + oc) * ch + c] =
                    taps.iter().map(|&(i, wt)| wt * src[(r * w + i) * ch + c] as f64).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(out_h * out_w * ch);
    for taps in &rows {
        for oc in 0..out_w {
            for c in 0..ch {
                let v: f64 = taps.iter().map(|&(i, wt)| wt * horiz[(i * out_w + oc) * ch + c]).sum();
                out.push((v as f32).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(out_h, out_w, ch, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let k = BicubicKernel::default();
        assert_eq!(k.weight(0.0), 1.0);
        assert_eq!(k.weight(0.5), 0.5625);
        assert_eq!(k.weight(-0.5), 0.5625);
        assert_eq!(k.weight(1.0), 0.0);
        assert_eq!(k.weight(1.5), -0.0625);
        assert_eq!(k.weight(2.0), 0.0);
        assert_eq!(k.weight(7.0), 0.0);
    }

    #[test]
    fn same_size_is_identity() {
        let img = Image::from_fn(5, 7, 3, |r, c, ch| ((r * 7 + c) * 3 + ch) as f32 / 105.0);
        assert_eq!(bicubic_resample(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn rejects_empty_target() {
        let img = Image::filled(4, 4, 1, 0.5);
        assert!(bicubic_resample(&img, 0, 4).is_err());
    }
}
