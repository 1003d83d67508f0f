//! PNG and binary PPM (P6) decoding/encoding.
//!
//! Samples are 8-bit on disk and mapped to `[0, 1]` by `/255` on read and
//! `round(v * 255)` (clamped) on write, so any 8-bit image round-trips
//! exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Png,
    Ppm,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Format> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(Format::Png),
            Some("ppm") => Ok(Format::Ppm),
            _ => Err(image_err(path, "unsupported format (expected .png or .ppm)")),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Png => "png",
            Format::Ppm => "ppm",
        }
    }
}

fn image_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn decode_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes).map_err(|d| image_err(path, d))
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|d| image_err(path, d))
    } else {
        Err(image_err(path, "unrecognized image signature"))
    }
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failure never leaves a partial file at `path`.
pub fn encode_image(image: &Image, path: &Path) -> Result<()> {
    let bytes = match Format::from_path(path)? {
        Format::Png => encode_png(image).map_err(|d| image_err(path, d))?,
        Format::Ppm => encode_ppm(image),
    };
    write_atomic(path, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn to_bytes(image: &Image) -> Vec<u8> {
    image.data().iter().map(|&v| quantize(v)).collect()
}

pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
    Image::new(height, width, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut decoder = png::Decoder::new(bytes);
    // Palette and sub-byte gray images expand to 8 bits; 16-bit stays 16-bit
    // so it can be rejected below instead of silently truncated.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported bit depth {:?}; only 8-bit images are accepted", info.bit_depth));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let src_channels = info.color_type.samples();
    let keep = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        png::ColorType::Rgb | png::ColorType::Rgba => 3,
        png::ColorType::Indexed => return Err("unexpanded palette image".into()),
    };
    let mut out = Vec::with_capacity(w * h * keep);
    for row in buf[..stride * h].chunks_exact(stride) {
        for px in row[..w * src_channels].chunks_exact(src_channels) {
            out.extend(px[..keep].iter().map(|&b| b as f32 / 255.0));
        }
    }
    Image::new(h, w, keep, out).map_err(|e| e.to_string())
}

fn encode_png(image: &Image) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(if image.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(&to_bytes(image)).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

fn encode_ppm(image: &Image) -> Vec<u8> {
    let rgb = image.to_rgb();
    let mut out = format!("P6\n{} {}\n255\n", rgb.width(), rgb.height()).into_bytes();
    out.extend(to_bytes(&rgb));
    out
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    // Header: magic, width, height, maxval separated by whitespace, with
    // optional `#` comments, then exactly one whitespace byte before data.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header")?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("malformed header".into());
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}; only 8-bit images are accepted"));
    }
    let need = w * h * 3;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(format!("truncated pixel data: expected {need} bytes, found {}", data.len()));
    }
    from_bytes(h, w, 3, &data[..need]).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_is_exact() {
        let img = Image::from_fn(2, 3, 3, |r, c, ch| ((r * 3 + c) * 3 + ch) as f32 / 255.0);
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_comments_and_truncation() {
        let mut bytes = b"P6 # c\n2 1\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5]);
        assert!(decode_ppm(&bytes).unwrap_err().contains("truncated"));
        bytes.push(6);
        assert_eq!(decode_ppm(&bytes).unwrap().width(), 2);
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(-0.1), 0);
        assert_eq!(quantize(1.5), 255);
        assert_eq!(quantize(0.5), 128);
        for b in 0..=255u8 {
            assert_eq!(quantize(b as f32 / 255.0), b);
        }
    }
}
