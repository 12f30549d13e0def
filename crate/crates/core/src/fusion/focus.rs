use crate::error::{invalid, Result};
use crate::imaging::{box_mean_plane, Image};

/// Non-negative per-pixel sharpness score on the grid of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusMap(Image);

impl FocusMap {
    pub fn from_image(img: Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(invalid("focus map must be single-channel"));
        }
        if img.data().iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("focus scores must be non-negative"));
        }
        Ok(Self(img))
    }

    pub fn as_image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.0.get(x, y, 0)
    }
}

/// Haar detail energy `lh² + hl² + hh²` averaged over `(2r+1)²` windows.
///
/// The detail coefficients are taken at every pixel phase (the 2×2 block
/// anchored at each pixel, borders clamped) so that the score does not
/// depend on where an edge falls relative to the decimation grid. The local
/// energy of the decimated bands, repeated over their blocks, is the
/// average of four of these phases.
pub fn focus_measure(img: &Image, radius: usize) -> Result<FocusMap> {
    if radius == 0 {
        return Err(invalid("focus radius must be at least 1"));
    }
    let gray = img.to_gray();
    let (w, h) = gray.dims();
    let g = gray.data();
    let at = |x: usize, y: usize| g[y.min(h - 1) * w + x.min(w - 1)] as f64;
    let mut energy = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let (a, b, c, d) = (at(x, y), at(x + 1, y), at(x, y + 1), at(x + 1, y + 1));
            let lh = (a + b - c - d) / 2.0;
            let hl = (a - b + c - d) / 2.0;
            let hh = (a - b - c + d) / 2.0;
            energy[y * w + x] = lh * lh + hl * hl + hh * hh;
        }
    }
    let mean = box_mean_plane(&energy, w, h, radius);
    let data = mean.into_iter().map(|v| v.max(0.0) as f32).collect();
    Ok(FocusMap(Image::from_vec(w, h, 1, data)?))
}
