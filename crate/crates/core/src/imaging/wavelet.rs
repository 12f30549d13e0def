//! Single-level orthonormal 2-D Haar transform.
//!
//! For a 2×2 block `[[a, b], [c, d]]` (row-major, `b` right of `a`):
//!
//! ```text
//! ll = (a + b + c + d) / 2
//! lh = (a + b - c - d) / 2    horizontal edges (row difference)
//! hl = (a - b + c - d) / 2    vertical edges (column difference)
//! hh = (a - b - c + d) / 2
//! ```
//!
//! The transform is orthonormal, so energy is preserved and `ll` of an input
//! in `[0, 1]` lies in `[0, 2]`. Odd widths or heights are extended by one
//! mirrored row/column before analysis and cropped again on synthesis.

use super::Image;
use crate::error::{invalid, Result};

/// Output of [`dwt2`]: four half-resolution bands plus the original size.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBands {
    pub ll: Image,
    pub lh: Image,
    pub hl: Image,
    pub hh: Image,
    /// Original (width, height) before even-padding.
    pub parity: (usize, usize),
}

impl WaveletBands {
    pub fn details(&self) -> [&Image; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    /// Sum of squared samples over all four bands.
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|b| b.data().iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum()
    }
}

pub fn dwt2(img: &Image) -> Result<WaveletBands> {
    if img.is_empty() {
        return Err(invalid("dwt2 of a zero-sized image"));
    }
    let (w, h) = img.dims();
    let (bw, bh) = (w.div_ceil(2), h.div_ceil(2));
    let ch = img.channels();
    let mut ll = Image::zeros(bw, bh, ch);
    let mut lh = Image::zeros(bw, bh, ch);
    let mut hl = Image::zeros(bw, bh, ch);
    let mut hh = Image::zeros(bw, bh, ch);
    for c in 0..ch {
        let p = img.plane(c);
        // mirrored extension: the padded row/column repeats the last one
        let at = |x: usize, y: usize| p[y.min(h - 1) * w + x.min(w - 1)] as f64;
        for by in 0..bh {
            for bx in 0..bw {
                let (x, y) = (2 * bx, 2 * by);
                let a = at(x, y);
                let b = at(x + 1, y);
                let cc = at(x, y + 1);
                let d = at(x + 1, y + 1);
                let o = (c * bh + by) * bw + bx;
                ll.data_mut()[o] = ((a + b + cc + d) * 0.5) as f32;
                lh.data_mut()[o] = ((a + b - cc - d) * 0.5) as f32;
                hl.data_mut()[o] = ((a - b + cc - d) * 0.5) as f32;
                hh.data_mut()[o] = ((a - b - cc + d) * 0.5) as f32;
            }
        }
    }
    for band in [&mut ll, &mut lh, &mut hl, &mut hh] {
        band.color_space = img.color_space;
    }
    Ok(WaveletBands {
        ll,
        lh,
        hl,
        hh,
        parity: (w, h),
    })
}

pub fn idwt2(bands: &WaveletBands) -> Result<Image> {
    let WaveletBands {
        ll,
        lh,
        hl,
        hh,
        parity: (w, h),
    } = bands;
    let (w, h) = (*w, *h);
    if !(ll.same_shape(lh) && ll.same_shape(hl) && ll.same_shape(hh)) {
        return Err(invalid("wavelet bands have mismatched dimensions"));
    }
    let (bw, bh) = ll.dims();
    if w.div_ceil(2) != bw || h.div_ceil(2) != bh || w == 0 || h == 0 {
        return Err(invalid(format!(
            "band size {bw}x{bh} does not match original size {w}x{h}"
        )));
    }
    let ch = ll.channels();
    let mut out = Image::zeros(w, h, ch);
    out.color_space = ll.color_space;
    for c in 0..ch {
        let (pl, plh, phl, phh) = (ll.plane(c), lh.plane(c), hl.plane(c), hh.plane(c));
        let dst = out.plane_mut(c);
        for by in 0..bh {
            for bx in 0..bw {
                let i = by * bw + bx;
                let (s, v, u, d) = (pl[i] as f64, plh[i] as f64, phl[i] as f64, phh[i] as f64);
                let block = [
                    (0, 0, (s + v + u + d) * 0.5),
                    (1, 0, (s + v - u - d) * 0.5),
                    (0, 1, (s - v + u - d) * 0.5),
                    (1, 1, (s - v - u + d) * 0.5),
                ];
                for (dx, dy, val) in block {
                    let (x, y) = (2 * bx + dx, 2 * by + dy);
                    if x < w && y < h {
                        dst[y * w + x] = val as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}
