use rayon::prelude::*;

use super::FusionMaskTriple;
use crate::error::{invalid, Result};
use crate::imaging::{dwt2, gaussian_blur, Image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// Patch side in pixels (odd values center cleanly).
    pub patch: usize,
    /// Largest offset searched along each axis, in pixels.
    pub search: usize,
    /// Mean squared low-band difference above which a match is rejected.
    pub max_cost: f64,
    /// Blur applied to both images for the full-resolution step.
    pub blur_sigma: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self { patch: 7, search: 16, max_cost: 0.01, blur_sigma: 1.5 }
    }
}

/// Search result for one patch centered at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMatch {
    pub x: usize,
    pub y: usize,
    /// Offset into `wide_r`: content at `p` in main is taken from `p + (dx, dy)`.
    pub dx: i64,
    pub dy: i64,
    /// Mean squared difference of the low-band patches at the coarse offset.
    pub cost: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub image: Image,
    pub matches: Vec<PatchMatch>,
}

/// Refills pixels with `m_refined > 0.5` from `wide_r`, falling back to main.
pub fn refine_occluded(
    main: &Image,
    wide_r: &Image,
    masks: &FusionMaskTriple,
    patch: usize,
    search: usize,
) -> Result<Image> {
    let params = RefineParams { patch, search, ..RefineParams::default() };
    Ok(refine_occluded_with(main, wide_r, None, masks, &params)?.image)
}

struct Gray {
    w: usize,
    h: usize,
    d: Vec<f64>,
}

impl Gray {
    fn new(img: &Image) -> Self {
        Self { w: img.width(), h: img.height(), d: img.data().iter().map(|&v| v as f64).collect() }
    }

    fn at_clamped(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        self.d[y * self.w + x]
    }

    fn contains(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> bool {
        x0 >= 0 && y0 >= 0 && x1 < self.w as i64 && y1 < self.h as i64
    }

    /// Mean squared difference between the `(2r+1)²` patch of `a` at `(ax, ay)`
    /// (clamped) and the patch of `self` at `(ax + ox, ay + oy)`, which must
    /// lie inside.
    fn ssd(&self, a: &Gray, ax: i64, ay: i64, ox: i64, oy: i64, r: i64) -> Option<f64> {
        let (bx, by) = (ax + ox, ay + oy);
        if !self.contains(bx - r, by - r, bx + r, by + r) {
            return None;
        }
        let mut s = 0.0;
        for j in -r..=r {
            for i in -r..=r {
                let d = a.at_clamped(ax + i, ay + j) - self.d[((by + j) as usize) * self.w + (bx + i) as usize];
                s += d * d;
            }
        }
        Some(s / ((2 * r + 1) * (2 * r + 1)) as f64)
    }
}

/// Lexicographic (cost, distance) comparison; ties keep the earlier candidate.
fn better(cost: f64, ox: i64, oy: i64, best: Option<(f64, i64, i64)>) -> bool {
    match best {
        None => true,
        Some((c, bx, by)) => cost < c || (cost == c && ox * ox + oy * oy < bx * bx + by * by),
    }
}

fn raised_cosine(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Patch centers along one axis: every `stride` pixels, plus the last pixel.
fn centers(n: usize, stride: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..n).step_by(stride).collect();
    if c.last() != Some(&(n - 1)) {
        c.push(n - 1);
    }
    c
}

/// Patch-based refill of the refined region.
///
/// Patches on a half-overlapping grid are matched against `wide_r` by an
/// exhaustive search on the Haar `ll` bands (even offsets), then polished to
/// one pixel on lightly blurred full-resolution gray images. Accepted wide
/// patches are blended with a raised-cosine window. A match is rejected when
/// any of its pixels leaves the frame or is invalid in `wide_validity`, or
/// when its low-band cost exceeds `max_cost`; uncovered pixels keep main.
pub fn refine_occluded_with(
    main: &Image,
    wide_r: &Image,
    wide_validity: Option<&Image>,
    masks: &FusionMaskTriple,
    params: &RefineParams,
) -> Result<Refinement> {
    let (w, h) = main.dims();
    if wide_r.dims() != (w, h) || masks.dims() != (w, h) {
        return Err(invalid("refinement inputs differ in size"));
    }
    if main.channels() != wide_r.channels() {
        return Err(invalid("refinement inputs differ in channel count"));
    }
    if let Some(v) = wide_validity {
        if v.dims() != (w, h) || v.channels() != 1 {
            return Err(invalid("validity must be single-channel and match the images"));
        }
    }
    if params.patch == 0 {
        return Err(invalid("patch size must be positive"));
    }
    let mut out = main.clone();
    let active_px = |x: usize, y: usize| masks.m_refined.get(x, y, 0) > 0.5;
    if w < 2 || h < 2 || !(0..w * h).any(|i| active_px(i % w, i / w)) {
        return Ok(Refinement { image: out, matches: Vec::new() });
    }

    let (gm, gw) = (main.to_gray(), wide_r.to_gray());
    let half_band = |g: &Image| -> Result<Gray> { Ok(Gray::new(&dwt2(g)?.ll.map(|v| 0.5 * v))) };
    let (llm, llw) = (half_band(&gm)?, half_band(&gw)?);
    let bm = Gray::new(&gaussian_blur(&gm, params.blur_sigma));
    let bw = Gray::new(&gaussian_blur(&gw, params.blur_sigma));

    let half = (params.patch / 2) as i64;
    let r_ll = half.max(2);
    let s_ll = (params.search / 2) as i64;
    let search = params.search as i64;
    let stride = (params.patch / 2).max(1);
    let grid: Vec<(usize, usize)> = centers(h, stride)
        .into_iter()
        .flat_map(|y| centers(w, stride).into_iter().map(move |x| (x, y)))
        .filter(|&(x, y)| {
            let (x0, x1) = (x.saturating_sub(half as usize), (x + half as usize).min(w - 1));
            let (y0, y1) = (y.saturating_sub(half as usize), (y + half as usize).min(h - 1));
            (y0..=y1).any(|yy| (x0..=x1).any(|xx| active_px(xx, yy)))
        })
        .collect();

    let matches: Vec<PatchMatch> = grid
        .par_iter()
        .map(|&(x, y)| {
            let (cx, cy) = ((x / 2) as i64, (y / 2) as i64);
            let mut coarse: Option<(f64, i64, i64)> = None;
            for oy in -s_ll..=s_ll {
                for ox in -s_ll..=s_ll {
                    if let Some(c) = llw.ssd(&llm, cx, cy, ox, oy, r_ll) {
                        if better(c, ox, oy, coarse) {
                            coarse = Some((c, ox, oy));
                        }
                    }
                }
            }
            let Some((cost, ox, oy)) = coarse else {
                return PatchMatch { x, y, dx: 0, dy: 0, cost: f64::INFINITY, accepted: false };
            };
            let mut fine: Option<(f64, i64, i64)> = None;
            for jy in -1..=1 {
                for jx in -1..=1 {
                    let (dx, dy) = (2 * ox + jx, 2 * oy + jy);
                    if dx.abs() > search || dy.abs() > search {
                        continue;
                    }
                    if let Some(c) = bw.ssd(&bm, x as i64, y as i64, dx, dy, half) {
                        if better(c, dx, dy, fine) {
                            fine = Some((c, dx, dy));
                        }
                    }
                }
            }
            let Some((_, dx, dy)) = fine else {
                return PatchMatch { x, y, dx: 2 * ox, dy: 2 * oy, cost, accepted: false };
            };
            let valid = wide_validity.is_none_or(|v| {
                (-half..=half).all(|j| {
                    (-half..=half).all(|i| {
                        let (px, py) = ((x as i64 + i).clamp(0, w as i64 - 1), (y as i64 + j).clamp(0, h as i64 - 1));
                        v.get((px + dx) as usize, (py + dy) as usize, 0) >= 0.5
                    })
                })
            });
            PatchMatch { x, y, dx, dy, cost, accepted: valid && cost <= params.max_cost }
        })
        .collect();

    let win = raised_cosine(2 * half as usize + 1);
    let ch = main.channels();
    let mut acc = vec![0.0f64; w * h * ch];
    let mut wsum = vec![0.0f64; w * h];
    for m in matches.iter().filter(|m| m.accepted) {
        for j in -half..=half {
            for i in -half..=half {
                let (px, py) = (m.x as i64 + i, m.y as i64 + j);
                if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                    continue;
                }
                let (sx, sy) = ((px + m.dx) as usize, (py + m.dy) as usize);
                if sx >= w || sy >= h {
                    continue;
                }
                let wt = win[(i + half) as usize] * win[(j + half) as usize];
                let p = py as usize * w + px as usize;
                wsum[p] += wt;
                for c in 0..ch {
                    acc[c * w * h + p] += wt * wide_r.get(sx, sy, c) as f64;
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if active_px(x, y) && wsum[p] > 0.0 {
                for c in 0..ch {
                    out.set(x, y, c, (acc[c * w * h + p] / wsum[p]) as f32);
                }
            }
        }
    }
    Ok(Refinement { image: out, matches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::synth;

    fn square_masks(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> FusionMaskTriple {
        let r = Image::from_fn(w, h, 1, |x, y, _| {
            if x >= x0 && x < x0 + side && y >= y0 && y < y0 + side { 1.0 } else { 0.0 }
        });
        let m = r.map(|v| 1.0 - v);
        FusionMaskTriple::from_main_refined(m, r).unwrap()
    }

    fn crop(img: &Image, x0: usize, y0: usize, side: usize) -> Image {
        Image::from_fn(side, side, img.channels(), |x, y, c| img.get(x0 + x, y0 + y, c))
    }

    #[test]
    fn nothing_to_refine_returns_main() {
        let main = synth::texture(40, 30, 3, 1);
        let wide = synth::texture(40, 30, 3, 2);
        let out = refine_occluded(&main, &wide, &FusionMaskTriple::all_main(40, 30), 7, 16).unwrap();
        assert_eq!(out, main);
    }

    #[test]
    fn blurred_main_is_refilled_with_sharp_content() {
        let sharp = synth::texture(96, 96, 3, 3);
        let main = gaussian_blur(&sharp, 2.0);
        let masks = square_masks(96, 96, 32, 32, 32);
        let out = refine_occluded(&main, &sharp, &masks, 7, 16).unwrap();
        let got = psnr(&crop(&out, 32, 32, 32), &crop(&sharp, 32, 32, 32)).unwrap();
        assert!(got >= 28.0, "psnr {got}");
        // untouched outside the square
        assert_eq!(out.get(5, 5, 0), main.get(5, 5, 0));
    }

    #[test]
    fn shifted_wide_offsets_recovered() {
        let main = synth::texture(96, 80, 3, 4);
        let wide = synth::translate(&main, 6.0, 0.0);
        let masks = square_masks(96, 80, 30, 24, 32);
        let params = RefineParams { search: 8, ..RefineParams::default() };
        let r = refine_occluded_with(&main, &wide, None, &masks, &params).unwrap();
        let good = r.matches.iter().filter(|m| (m.dx - 6).abs() <= 1 && m.dy.abs() <= 1).count();
        assert!(good as f64 >= 0.9 * r.matches.len() as f64, "{good}/{}", r.matches.len());
        let inner = crop(&r.image, 34, 28, 24);
        assert!(inner.max_abs_diff(&crop(&main, 34, 28, 24)) <= 1e-5);
    }

    /// Brute-force restatement of the two-stage search with plain loops.
    fn oracle_offset(main: &Image, wide: &Image, x: usize, y: usize, p: &RefineParams) -> Option<(i64, i64)> {
        let (w, h) = main.dims();
        let (gm, gw) = (main.to_gray(), wide.to_gray());
        let (lw, lh) = (w / 2, h / 2);
        let ll = |g: &Image, x: i64, y: i64| -> f64 {
            let (x, y) = (2 * x as usize, 2 * y as usize);
            (g.get(x, y, 0) as f64 + g.get(x + 1, y, 0) as f64 + g.get(x, y + 1, 0) as f64 + g.get(x + 1, y + 1, 0) as f64) / 4.0
        };
        let half = (p.patch / 2) as i64;
        let r = half.max(2);
        let s = (p.search / 2) as i64;
        let (cx, cy) = ((x / 2) as i64, (y / 2) as i64);
        let mut best: Option<(f64, i64, i64)> = None;
        for oy in -s..=s {
            for ox in -s..=s {
                let (bx, by) = (cx + ox, cy + oy);
                if bx - r < 0 || by - r < 0 || bx + r >= lw as i64 || by + r >= lh as i64 {
                    continue;
                }
                let mut c = 0.0;
                for j in -r..=r {
                    for i in -r..=r {
                        let ax = (cx + i).clamp(0, lw as i64 - 1);
                        let ay = (cy + j).clamp(0, lh as i64 - 1);
                        c += (ll(&gm, ax, ay) - ll(&gw, bx + i, by + j)).powi(2);
                    }
                }
                c /= ((2 * r + 1) * (2 * r + 1)) as f64;
                if better(c, ox, oy, best) {
                    best = Some((c, ox, oy));
                }
            }
        }
        let (_, ox, oy) = best?;
        let (bm, bw) = (gaussian_blur(&gm, p.blur_sigma), gaussian_blur(&gw, p.blur_sigma));
        let mut fine: Option<(f64, i64, i64)> = None;
        for jy in -1..=1 {
            for jx in -1..=1 {
                let (dx, dy) = (2 * ox + jx, 2 * oy + jy);
                let (bx, by) = (x as i64 + dx, y as i64 + dy);
                if bx - half < 0 || by - half < 0 || bx + half >= w as i64 || by + half >= h as i64 {
                    continue;
                }
                let mut c = 0.0;
                for j in -half..=half {
                    for i in -half..=half {
                        let ax = (x as i64 + i).clamp(0, w as i64 - 1) as usize;
                        let ay = (y as i64 + j).clamp(0, h as i64 - 1) as usize;
                        c += (bm.get(ax, ay, 0) as f64 - bw.get((bx + i) as usize, (by + j) as usize, 0) as f64).powi(2);
                    }
                }
                c /= ((2 * half + 1) * (2 * half + 1)) as f64;
                if better(c, dx, dy, fine) {
                    fine = Some((c, dx, dy));
                }
            }
        }
        fine.map(|(_, dx, dy)| (dx, dy))
    }

    #[test]
    fn search_matches_exhaustive_oracle_on_small_crops() {
        let main = synth::texture(40, 36, 3, 5);
        let wide = synth::translate(&synth::texture(40, 36, 3, 5), 3.0, -2.0);
        let masks = square_masks(40, 36, 14, 12, 12);
        let params = RefineParams { search: 6, ..RefineParams::default() };
        let r = refine_occluded_with(&main, &wide, None, &masks, &params).unwrap();
        assert!(!r.matches.is_empty());
        for m in &r.matches {
            assert_eq!(oracle_offset(&main, &wide, m.x, m.y, &params), Some((m.dx, m.dy)), "patch at ({}, {})", m.x, m.y);
        }
    }

    #[test]
    fn invalid_wide_pixels_fall_back_to_main() {
        let main = synth::texture(48, 48, 3, 6);
        let wide = synth::texture(48, 48, 3, 6).map(|v| 1.0 - v);
        let masks = square_masks(48, 48, 16, 16, 16);
        let none_valid = Image::zeros(48, 48, 1);
        let r = refine_occluded_with(&main, &wide, Some(&none_valid), &masks, &RefineParams::default()).unwrap();
        assert!(r.matches.iter().all(|m| !m.accepted));
        assert_eq!(r.image, main);
    }
}
