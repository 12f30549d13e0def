//! Bilinear sampling, backward warping and resizing.
//!
//! Pixel centers sit on integer coordinates. Resizing keeps pixel centers
//! aligned: destination pixel `d` maps to source `(d + 0.5) * src/dst - 0.5`.

use rayon::prelude::*;

use super::Image;
use crate::error::{invalid, Result};

/// Coordinates up to this far outside the frame still count as inside.
const EDGE_TOLERANCE: f64 = 1e-3;

#[inline]
fn inside_frame(x: f64, y: f64, w: usize, h: usize) -> bool {
    x >= -EDGE_TOLERANCE
        && y >= -EDGE_TOLERANCE
        && x <= (w - 1) as f64 + EDGE_TOLERANCE
        && y <= (h - 1) as f64 + EDGE_TOLERANCE
}

/// Bilinear lookup in a `w`×`h` plane. Returns `None` outside the frame.
#[inline]
pub fn sample_bilinear(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> Option<f32> {
    if !inside_frame(x, y, w, h) {
        return None;
    }
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    let x = x.clamp(0.0, wf);
    let y = y.clamp(0.0, hf);
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx: usize, yy: usize| plane[yy * w + xx] as f64;
    let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
    let bot = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
    Some((top + (bot - top) * fy) as f32)
}

/// Backward warp: output pixel `(x, y)` takes the bilinear sample of `img`
/// at `sampler(x, y)`. Returns the warped image and a single-channel validity
/// map (1 where the source coordinate was inside the frame, else 0 with a
/// zero sample).
pub fn warp_bilinear<F>(img: &Image, out_w: usize, out_h: usize, sampler: F) -> (Image, Image)
where
    F: Fn(f64, f64) -> (f64, f64) + Sync,
{
    let (w, h) = img.dims();
    let ch = img.channels();
    let mut out = Image::zeros(out_w, out_h, ch);
    out.color_space = img.color_space;
    let mut valid = Image::zeros(out_w, out_h, 1);
    if img.is_empty() || out_w == 0 || out_h == 0 {
        return (out, valid);
    }

    let coords: Vec<(f64, f64)> = (0..out_h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let sampler = &sampler;
            (0..out_w).map(move |x| sampler(x as f64, y as f64))
        })
        .collect();

    valid
        .data_mut()
        .par_chunks_mut(out_w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                let (sx, sy) = coords[y * out_w + x];
                *v = if inside_frame(sx, sy, w, h) { 1.0 } else { 0.0 };
            }
        });

    let n = out_w * out_h;
    out.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(c, dst)| {
            let src = img.plane(c);
            dst.par_chunks_mut(out_w).enumerate().for_each(|(y, row)| {
                for (x, v) in row.iter_mut().enumerate() {
                    let (sx, sy) = coords[y * out_w + x];
                    *v = if sx.is_finite() && sy.is_finite() {
                        sample_bilinear(src, w, h, sx, sy).unwrap_or(0.0)
                    } else {
                        0.0
                    };
                }
            });
        });
    (out, valid)
}

/// Source-coordinate weights for one axis of a bilinear resize.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Separable bilinear resampling with edge clamping.
pub fn resize_bilinear(img: &Image, new_w: usize, new_h: usize) -> Result<Image> {
    if new_w == 0 || new_h == 0 {
        return Err(invalid("resize target must be at least 1x1"));
    }
    if img.is_empty() {
        return Err(invalid("cannot resize an empty image"));
    }
    if img.dims() == (new_w, new_h) {
        return Ok(img.clone());
    }
    let (w, h) = img.dims();
    let xt = bilinear_taps(w, new_w);
    let yt = bilinear_taps(h, new_h);
    let ch = img.channels();
    let mut out = Image::zeros(new_w, new_h, ch);
    out.color_space = img.color_space;
    let n = new_w * new_h;
    out.data_mut().par_chunks_mut(n).enumerate().for_each(|(c, dst)| {
        let src = img.plane(c);
        // horizontal pass into an f64 buffer, then vertical
        let mut tmp = vec![0.0f64; new_w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, &(i0, i1, f)) in xt.iter().enumerate() {
                tmp[y * new_w + x] = row[i0] as f64 * (1.0 - f) + row[i1] as f64 * f;
            }
        }
        for (y, &(j0, j1, f)) in yt.iter().enumerate() {
            for x in 0..new_w {
                dst[y * new_w + x] =
                    (tmp[j0 * new_w + x] * (1.0 - f) + tmp[j1 * new_w + x] * f) as f32;
            }
        }
    });
    Ok(out)
}

/// Area-weighted taps: each destination cell averages the source interval it covers.
fn area_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * scale;
            let hi = (d as f64 + 1.0) * scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let a = (i as f64).max(lo);
                let b = ((i + 1) as f64).min(hi);
                if b > a {
                    taps.push((i, (b - a) / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Box-filter (area) resampling; the anti-aliased choice for downscaling.
pub fn resize_area(img: &Image, new_w: usize, new_h: usize) -> Result<Image> {
    if new_w == 0 || new_h == 0 {
        return Err(invalid("resize target must be at least 1x1"));
    }
    if img.is_empty() {
        return Err(invalid("cannot resize an empty image"));
    }
    if img.dims() == (new_w, new_h) {
        return Ok(img.clone());
    }
    if new_w > img.width() || new_h > img.height() {
        return resize_bilinear(img, new_w, new_h);
    }
    let (w, h) = img.dims();
    let xt = area_taps(w, new_w);
    let yt = area_taps(h, new_h);
    let ch = img.channels();
    let mut out = Image::zeros(new_w, new_h, ch);
    out.color_space = img.color_space;
    let n = new_w * new_h;
    out.data_mut().par_chunks_mut(n).enumerate().for_each(|(c, dst)| {
        let src = img.plane(c);
        let mut tmp = vec![0.0f64; new_w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, taps) in xt.iter().enumerate() {
                tmp[y * new_w + x] = taps.iter().map(|&(i, wt)| row[i] as f64 * wt).sum();
            }
        }
        for (y, taps) in yt.iter().enumerate() {
            for x in 0..new_w {
                dst[y * new_w + x] = taps
                    .iter()
                    .map(|&(j, wt)| tmp[j * new_w + x] * wt)
                    .sum::<f64>() as f32;
            }
        }
    });
    Ok(out)
}
