//! Planar float images, resampling, filtering, the Haar wavelet and PNG I/O.

mod filter;
pub mod io;
mod resample;
mod wavelet;

pub use filter::{box_filter, gaussian_blur, guided_filter};
pub(crate) use filter::box_mean_plane;
pub use resample::{resize_area, resize_bilinear, sample_bilinear, warp_bilinear};
pub use wavelet::{dwt2, idwt2, WaveletBands};

use crate::error::{invalid, Result};

/// Color-space tag. Metadata only: samples are processed as decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorSpace {
    Linear,
    #[default]
    Srgb,
}

/// Planar `f32` raster with 1 or 3 channels, row-major within each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    pub color_space: ColorSpace,
}

impl Image {
    /// Zero-filled image. Panics if `channels` is not 1 or 3.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(
            channels == 1 || channels == 3,
            "channels must be 1 or 3, got {channels}"
        );
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
            color_space: ColorSpace::default(),
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image samples must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            color_space: ColorSpace::default(),
        })
    }

    /// Builds an image by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let i = img.index(x, y, c);
                    img.data[i] = f(x, y, c);
                }
            }
        }
        img
    }

    /// Builds a multi-channel image from equally sized single-channel planes.
    pub fn from_planes(planes: &[Image]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| invalid("no planes given"))?;
        if planes.len() != 1 && planes.len() != 3 {
            return Err(invalid(format!("expected 1 or 3 planes, got {}", planes.len())));
        }
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(w * h * planes.len());
        for p in planes {
            if p.dims() != (w, h) || p.channels != 1 {
                return Err(invalid("planes must be single-channel with equal dimensions"));
            }
            data.extend_from_slice(&p.data);
        }
        let mut img = Self::from_vec(w, h, planes.len(), data)?;
        img.color_space = first.color_space;
        Ok(img)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
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
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy of channel `c` as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        let mut out = Image::zeros(self.width, self.height, 1);
        out.data.copy_from_slice(self.plane(c));
        out.color_space = self.color_space;
        out
    }

    /// Rec.601 luma for 3-channel input, a copy for 1-channel input.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        let mut out = Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
            color_space: self.color_space,
        };
        out.sanitize();
        out
    }

    /// Replicates a single-channel image into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
            color_space: self.color_space,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    pub(crate) fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Replaces non-finite samples by zero.
    pub(crate) fn sanitize(&mut self) {
        for v in &mut self.data {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        s / self.data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_channels() {
        assert!(Image::from_vec(2, 2, 1, vec![0.0; 4]).is_ok());
        assert!(Image::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::from_vec(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::from_vec(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn gray_of_white_is_one() {
        let img = Image::filled(3, 2, 3, 1.0);
        let g = img.to_gray();
        assert_eq!(g.channels(), 1);
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn planes_round_trip() {
        let img = Image::from_fn(4, 3, 3, |x, y, c| (x + 10 * y + 100 * c) as f32);
        let planes: Vec<_> = (0..3).map(|c| img.channel(c)).collect();
        assert_eq!(Image::from_planes(&planes).unwrap(), img);
    }
}
