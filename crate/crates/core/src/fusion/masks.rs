use std::path::Path;

use super::FocusMap;
use crate::error::{invalid, Result};
use crate::flow::ConfidenceMap;
use crate::imaging::{guided_filter, io, Image};

/// Largest deviation of `m_main + m_refined + m_wide` from 1 accepted by
/// [`crate::fusion::fuse_aif`].
pub const MASK_SUM_TOLERANCE: f64 = 1e-4;

/// Per-pixel convex weights of the three fusion candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMaskTriple {
    pub m_main: Image,
    pub m_refined: Image,
    pub m_wide: Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    /// Main wins when `f_main ≥ f_wide·(1 + margin)`.
    pub margin: f64,
    pub guided_radius: usize,
    pub guided_eps: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self { margin: 0.15, guided_radius: 8, guided_eps: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Main,
    Refined,
    Wide,
}

impl FusionMaskTriple {
    /// One-hot masks selecting `main` everywhere.
    pub fn all_main(width: usize, height: usize) -> Self {
        Self {
            m_main: Image::filled(width, height, 1, 1.0),
            m_refined: Image::zeros(width, height, 1),
            m_wide: Image::zeros(width, height, 1),
        }
    }

    /// Builds a triple from the first two masks; `m_wide` takes the rest.
    pub fn from_main_refined(m_main: Image, m_refined: Image) -> Result<Self> {
        if m_main.dims() != m_refined.dims() || m_main.channels() != 1 || m_refined.channels() != 1 {
            return Err(invalid("masks must be single-channel and equally sized"));
        }
        let m_wide = Image::from_fn(m_main.width(), m_main.height(), 1, |x, y, _| {
            (1.0 - m_main.get(x, y, 0) as f64 - m_refined.get(x, y, 0) as f64) as f32
        });
        let t = Self { m_main, m_refined, m_wide };
        t.validate(MASK_SUM_TOLERANCE)?;
        Ok(t)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m_main.dims()
    }

    /// Largest `|Σ masks − 1|` over all pixels.
    pub fn max_sum_error(&self) -> f64 {
        self.m_main
            .data()
            .iter()
            .zip(self.m_refined.data())
            .zip(self.m_wide.data())
            .map(|((&a, &b), &c)| (a as f64 + b as f64 + c as f64 - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, tolerance: f64) -> Result<()> {
        let d = self.m_main.dims();
        if self.m_refined.dims() != d || self.m_wide.dims() != d {
            return Err(invalid("fusion masks differ in size"));
        }
        let all = [&self.m_main, &self.m_refined, &self.m_wide];
        if all.iter().any(|m| m.channels() != 1) {
            return Err(invalid("fusion masks must be single-channel"));
        }
        if all.iter().flat_map(|m| m.data()).any(|&v| !(-1e-6..=1.0 + 1e-6).contains(&v)) {
            return Err(invalid("fusion mask weights must lie in [0, 1]"));
        }
        let err = self.max_sum_error();
        if !(err <= tolerance) {
            return Err(invalid(format!("fusion masks sum to 1 only within {err:.3e}")));
        }
        Ok(())
    }

    /// Writes `m_main.png`, `m_refined.png` and `m_wide.png` as 8-bit gray.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| crate::Error::Io { path: dir.to_path_buf(), source })?;
        for (name, m) in [("m_main", &self.m_main), ("m_refined", &self.m_refined), ("m_wide", &self.m_wide)] {
            io::save_png(m, dir.join(format!("{name}.png")), io::BitDepth::Eight)?;
        }
        Ok(())
    }
}

/// Chooses a source per pixel, smooths the one-hot choice with an
/// edge-aware filter guided by `guide` and renormalizes.
///
/// Main wins where it is sharper by the margin; otherwise the flow-warped
/// wide image is used where the flow is confident and the warp valid, and
/// the refined image everywhere else.
pub fn compute_fusion_masks(
    f_main: &FocusMap,
    f_wide: &FocusMap,
    conf: &ConfidenceMap,
    validity: &Image,
    guide: &Image,
    params: &MaskParams,
) -> Result<FusionMaskTriple> {
    let d = f_main.dims();
    if f_wide.dims() != d || conf.dims() != d || validity.dims() != d || guide.dims() != d {
        return Err(invalid("fusion mask inputs differ in size"));
    }
    if validity.channels() != 1 {
        return Err(invalid("validity must be single-channel"));
    }
    if !(params.margin >= 0.0) || !(params.guided_eps > 0.0) {
        return Err(invalid("margin must be non-negative and eps positive"));
    }
    let (w, h) = d;
    let choice: Vec<Source> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (fm, fw) = (f_main.get(x, y) as f64, f_wide.get(x, y) as f64);
            if fm >= fw * (1.0 + params.margin) {
                Source::Main
            } else if conf.is_confident(x, y) && validity.get(x, y, 0) >= 0.5 {
                Source::Wide
            } else {
                Source::Refined
            }
        })
        .collect();
    let one_hot = |s: Source| {
        let data = choice.iter().map(|&c| if c == s { 1.0 } else { 0.0 }).collect();
        Image::from_vec(w, h, 1, data)
    };
    let mut soft = Vec::with_capacity(3);
    for s in [Source::Main, Source::Refined, Source::Wide] {
        soft.push(guided_filter(&one_hot(s)?, guide, params.guided_radius, params.guided_eps)?);
    }
    let mut m_main = Image::zeros(w, h, 1);
    let mut m_refined = Image::zeros(w, h, 1);
    let mut m_wide = Image::zeros(w, h, 1);
    for i in 0..w * h {
        let v = [0, 1, 2].map(|k| (soft[k].data()[i] as f64).clamp(0.0, 1.0));
        let sum = v[0] + v[1] + v[2];
        let (a, b) = if sum > 1e-9 {
            (v[0] / sum, v[1] / sum)
        } else {
            match choice[i] {
                Source::Main => (1.0, 0.0),
                Source::Refined => (0.0, 1.0),
                Source::Wide => (0.0, 0.0),
            }
        };
        let (a, b) = (a as f32, b as f32);
        m_main.data_mut()[i] = a;
        m_refined.data_mut()[i] = b;
        m_wide.data_mut()[i] = (1.0 - a as f64 - b as f64).max(0.0) as f32;
    }
    Ok(FusionMaskTriple { m_main, m_refined, m_wide })
}
