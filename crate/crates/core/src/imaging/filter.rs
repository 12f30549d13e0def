use rayon::prelude::*;

use super::Image;
use crate::error::{invalid, Result};

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable 1-D pass over every row (`horizontal`) or column, clamping at the border.
fn convolve_axis(src: &[f32], w: usize, h: usize, kernel: &[f64], horizontal: bool) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (k, &kv) in kernel.iter().enumerate() {
                let off = k as isize - r;
                let (sx, sy) = if horizontal {
                    ((x as isize + off).clamp(0, w as isize - 1) as usize, y)
                } else {
                    (x, (y as isize + off).clamp(0, h as isize - 1) as usize)
                };
                acc += src[sy * w + sx] as f64 * kv;
            }
            *v = acc as f32;
        }
    });
    out
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma <= 0` copies.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 || img.is_empty() {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = img.dims();
    let mut out = img.clone();
    for c in 0..img.channels() {
        let tmp = convolve_axis(img.plane(c), w, h, &kernel, true);
        let res = convolve_axis(&tmp, w, h, &kernel, false);
        out.plane_mut(c).copy_from_slice(&res);
    }
    out
}

/// Running mean over `[i - r, i + r]` clipped to the valid range.
fn box_mean_1d(src: &[f64], r: usize, dst: &mut [f64]) {
    let n = src.len();
    let mut prefix = vec![0.0f64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + src[i];
    }
    for (i, d) in dst.iter_mut().enumerate() {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(n);
        *d = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
    }
}

pub(crate) fn box_mean_plane(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let mut tmp = vec![0.0f64; w * h];
    tmp.par_chunks_mut(w)
        .zip(src.par_chunks(w))
        .for_each(|(d, s)| box_mean_1d(s, r, d));
    // vertical pass as a sliding sum of whole rows
    let mut out = vec![0.0f64; w * h];
    let mut acc = vec![0.0f64; w];
    for row in tmp.chunks(w).take(r.min(h - 1) + 1) {
        acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(h);
        let inv = 1.0 / (hi - lo) as f64;
        out[y * w..(y + 1) * w]
            .iter_mut()
            .zip(&acc)
            .for_each(|(o, &a)| *o = a * inv);
        if y + r + 1 < h {
            let add = &tmp[(y + r + 1) * w..(y + r + 2) * w];
            acc.iter_mut().zip(add).for_each(|(a, &v)| *a += v);
        }
        if y >= r {
            let sub = &tmp[(y - r) * w..(y - r + 1) * w];
            acc.iter_mut().zip(sub).for_each(|(a, &v)| *a -= v);
        }
    }
    out
}

/// Mean over the `(2r+1)²` window, restricted to in-frame pixels.
pub fn box_filter(img: &Image, radius: usize) -> Image {
    let (w, h) = img.dims();
    let mut out = img.clone();
    if img.is_empty() {
        return out;
    }
    for c in 0..img.channels() {
        let src: Vec<f64> = img.plane(c).iter().map(|&v| v as f64).collect();
        let res = box_mean_plane(&src, w, h, radius);
        out.plane_mut(c)
            .iter_mut()
            .zip(res)
            .for_each(|(d, s)| *d = s as f32);
    }
    out
}

/// Gray-guide guided filter. `input` may have 1 or 3 channels; each channel
/// is filtered against the luma of `guide`.
pub fn guided_filter(input: &Image, guide: &Image, radius: usize, eps: f64) -> Result<Image> {
    if input.dims() != guide.dims() {
        return Err(invalid("guided filter input and guide differ in size"));
    }
    let (w, h) = input.dims();
    let mut out = input.clone();
    if input.is_empty() {
        return Ok(out);
    }
    let g: Vec<f64> = guide.to_gray().data().iter().map(|&v| v as f64).collect();
    let mean_i = box_mean_plane(&g, w, h, radius);
    let ii: Vec<f64> = g.iter().map(|v| v * v).collect();
    let corr_ii = box_mean_plane(&ii, w, h, radius);
    for c in 0..input.channels() {
        let p: Vec<f64> = input.plane(c).iter().map(|&v| v as f64).collect();
        let mean_p = box_mean_plane(&p, w, h, radius);
        let ip: Vec<f64> = g.iter().zip(&p).map(|(a, b)| a * b).collect();
        let corr_ip = box_mean_plane(&ip, w, h, radius);
        let mut a = vec![0.0f64; w * h];
        let mut b = vec![0.0f64; w * h];
        for i in 0..w * h {
            let var = (corr_ii[i] - mean_i[i] * mean_i[i]).max(0.0);
            let cov = corr_ip[i] - mean_i[i] * mean_p[i];
            a[i] = cov / (var + eps);
            b[i] = mean_p[i] - a[i] * mean_i[i];
        }
        let mean_a = box_mean_plane(&a, w, h, radius);
        let mean_b = box_mean_plane(&b, w, h, radius);
        for (i, d) in out.plane_mut(c).iter_mut().enumerate() {
            *d = (mean_a[i] * g[i] + mean_b[i]) as f32;
        }
    }
    out.sanitize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_preserves_constant() {
        let img = Image::filled(20, 11, 3, 0.4);
        let out = gaussian_blur(&img, 2.5);
        assert!(out.max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn box_filter_matches_brute_force() {
        let img = Image::from_fn(9, 7, 1, |x, y, _| ((x * 5 + y * 3) % 7) as f32);
        let r = 2;
        let out = box_filter(&img, r);
        for y in 0..7usize {
            for x in 0..9usize {
                let (mut s, mut n) = (0.0f64, 0usize);
                for yy in y.saturating_sub(r)..(y + r + 1).min(7) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(9) {
                        s += img.get(xx, yy, 0) as f64;
                        n += 1;
                    }
                }
                assert!((out.get(x, y, 0) as f64 - s / n as f64).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn guided_filter_keeps_constant_input() {
        let guide = Image::from_fn(16, 16, 1, |x, _, _| if x < 8 { 0.0 } else { 1.0 });
        let input = Image::filled(16, 16, 1, 0.25);
        let out = guided_filter(&input, &guide, 4, 1e-3).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-5));
    }

    #[test]
    fn guided_filter_preserves_guide_edge() {
        let guide = Image::from_fn(32, 8, 1, |x, _, _| if x < 16 { 0.0 } else { 1.0 });
        let out = guided_filter(&guide, &guide, 4, 1e-4).unwrap();
        assert!(out.get(14, 4, 0) < 0.05);
        assert!(out.get(17, 4, 0) > 0.95);
    }
}
