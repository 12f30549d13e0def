//! Image-level registration of the ultra-wide image onto the main frame:
//! difference-of-Gaussians keypoints, gradient-histogram descriptors,
//! mutual nearest-neighbor ratio matching and a RANSAC homography.

mod detect;
mod homography;
mod matching;

pub use detect::{describe, detect_and_describe, detect_keypoints, DetectorParams, Feature};
pub use homography::{
    estimate_homography_ransac, fit_homography_dlt, warp_homography, write_correspondences_csv,
    Correspondence, Homography, RansacParams, RansacResult,
};
pub use matching::match_descriptors;

/// Length of every [`Descriptor`].
pub const DESCRIPTOR_LEN: usize = 128;

/// A detected scale-space extremum, in base-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Pyramid octave the extremum was found in.
    pub octave: usize,
    /// Blur scale in base-image pixels.
    pub sigma: f32,
    /// Dominant gradient direction, radians.
    pub orientation: f32,
    /// Absolute interpolated difference-of-Gaussians response.
    pub score: f32,
}

/// L2-normalized 128-bin gradient-orientation histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    /// Normalizes `v`; a zero vector becomes the uniform unit vector.
    pub fn from_raw(mut v: [f32; DESCRIPTOR_LEN]) -> Self {
        let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        if norm < 1e-12 || !norm.is_finite() {
            v = [1.0 / (DESCRIPTOR_LEN as f32).sqrt(); DESCRIPTOR_LEN];
        } else {
            v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        }
        Descriptor(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn distance(&self, other: &Descriptor) -> f32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt()
    }
}
