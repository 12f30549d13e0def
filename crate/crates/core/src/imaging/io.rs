//! PNG read/write (8- and 16-bit) and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes a PNG into `[0, 1]` samples. Gray inputs give 1 channel, color
/// inputs 3; alpha is dropped.
pub fn load_png(path: impl AsRef<Path>) -> Result<(Image, BitDepth)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dynimg = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| codec_err(path, e))?;
    decode(dynimg).ok_or_else(|| codec_err(path, "unsupported PNG pixel layout"))
}

fn planar_from_interleaved<T: Copy + Into<f64>>(
    w: usize,
    h: usize,
    ch: usize,
    raw: &[T],
    max: f64,
) -> Image {
    let mut img = Image::zeros(w, h, ch);
    let n = w * h;
    for c in 0..ch {
        let plane = img.plane_mut(c);
        for i in 0..n {
            plane[i] = (raw[i * ch + c].into() / max) as f32;
        }
    }
    img
}

fn decode(d: DynamicImage) -> Option<(Image, BitDepth)> {
    let (w, h) = (d.width() as usize, d.height() as usize);
    use DynamicImage::*;
    let out = match d {
        ImageLuma8(b) => (planar_from_interleaved(w, h, 1, b.as_raw(), 255.0), BitDepth::Eight),
        ImageLumaA8(_) => {
            let b = d.to_luma8();
            (planar_from_interleaved(w, h, 1, b.as_raw(), 255.0), BitDepth::Eight)
        }
        ImageRgb8(b) => (planar_from_interleaved(w, h, 3, b.as_raw(), 255.0), BitDepth::Eight),
        ImageRgba8(_) => {
            let b = d.to_rgb8();
            (planar_from_interleaved(w, h, 3, b.as_raw(), 255.0), BitDepth::Eight)
        }
        ImageLuma16(b) => (planar_from_interleaved(w, h, 1, b.as_raw(), 65535.0), BitDepth::Sixteen),
        ImageLumaA16(_) => {
            let b = d.to_luma16();
            (planar_from_interleaved(w, h, 1, b.as_raw(), 65535.0), BitDepth::Sixteen)
        }
        ImageRgb16(b) => (planar_from_interleaved(w, h, 3, b.as_raw(), 65535.0), BitDepth::Sixteen),
        ImageRgba16(_) => {
            let b = d.to_rgb16();
            (planar_from_interleaved(w, h, 3, b.as_raw(), 65535.0), BitDepth::Sixteen)
        }
        _ => return None,
    };
    Some(out)
}

/// Quantizes a sample: clamp to `[0, 1]`, scale, round half to even.
#[inline]
pub fn quantize(v: f32, depth: BitDepth) -> u16 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (v as f64 * depth.max_value()).round_ties_even() as u16
}

/// Encodes to PNG bytes.
pub fn encode_png(img: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let (w, h) = img.dims();
    let ch = img.channels();
    let n = w * h;
    let mut inter = vec![0u16; n * ch];
    for c in 0..ch {
        for (i, &v) in img.plane(c).iter().enumerate() {
            inter[i * ch + c] = quantize(v, depth);
        }
    }
    let (w32, h32) = (w as u32, h as u32);
    let dynimg = match (ch, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, inter.iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (_, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, inter.iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, inter).expect("buffer size"),
        ),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, inter).expect("buffer size"),
        ),
    };
    let mut buf = Vec::new();
    dynimg
        .write_with_encoder(PngEncoder::new(&mut buf))
        .map_err(|e| codec_err(Path::new("<memory>"), e))?;
    Ok(buf)
}

pub fn save_png(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let bytes = encode_png(img, depth)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_to_even() {
        // 0.5 * 255 = 127.5 -> 128 and 0.5 * 65535 = 32767.5 -> 32768 (even)
        assert_eq!(quantize(0.5, BitDepth::Eight), 128);
        assert_eq!(quantize(0.5, BitDepth::Sixteen), 32768);
        assert_eq!(quantize(0.25, BitDepth::Eight), 64);
        assert_eq!(quantize(1.0, BitDepth::Eight), 255);
        assert_eq!(quantize(-0.2, BitDepth::Eight), 0);
        assert_eq!(quantize(7.0, BitDepth::Sixteen), 65535);
    }

    #[test]
    fn png_round_trip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        for (depth, max) in [(BitDepth::Eight, 255.0), (BitDepth::Sixteen, 65535.0)] {
            for ch in [1, 3] {
                let img = Image::from_fn(5, 4, ch, |x, y, c| {
                    ((x * 37 + y * 11 + c * 5) % 256) as f32 * (max as f32 / 255.0) / max as f32
                });
                let p = dir.path().join(format!("t{ch}_{max}.png"));
                save_png(&img, &p, depth).unwrap();
                let (back, d) = load_png(&p).unwrap();
                assert_eq!(d, depth);
                assert_eq!(back.channels(), ch);
                assert!(back.max_abs_diff(&img) <= 0.5 / max as f32 + 1e-7);
            }
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_png("/nonexistent/definitely/not.png"),
            Err(Error::Io { .. })
        ));
    }
}
