//! All-in-focus photo synthesis from a main-camera / ultra-wide-camera pair.
//!
//! The pipeline runs in three stages:
//!
//! 1. spatial alignment: keypoint registration and a RANSAC homography bring
//!    the ultra-wide image into the main frame, then a dense coarse-to-fine
//!    flow removes the remaining parallax ([`registration`], [`flow`]);
//! 2. color alignment: an affine color field is fitted on the Haar low band
//!    against the main image and applied while the ultra-wide detail bands
//!    pass through untouched ([`color`]);
//! 3. occlusion-aware synthesis: focus measures, the flow confidence map and
//!    the warp validity decide three convex fusion masks, occluded regions are
//!    refilled from the homography-warped image, and the three candidates are
//!    blended ([`fusion`]).
//!
//! [`metrics`] and [`dataset`] provide PSNR/SSIM and dataset-level evaluation;
//! [`pipeline`] strings the stages together under a [`config::PipelineConfig`].

pub mod color;
pub mod config;
pub mod dataset;
mod error;
pub mod flow;
pub mod fusion;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod registration;
pub mod synth;

pub use error::{Error, Result};
pub use imaging::{ColorSpace, Image, WaveletBands};
