//! Difference-of-Gaussians detector and 4×4×8 gradient-histogram descriptor.

use std::f32::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::{Descriptor, Keypoint, DESCRIPTOR_LEN};
use crate::error::{invalid, Result};
use crate::imaging::{gaussian_blur, Image};

/// Minimum side length accepted by the detector.
pub const MIN_DETECT_SIZE: usize = 32;

const BORDER: usize = 5;
const ORI_BINS: usize = 36;
const DESC_GRID: usize = 4;
const DESC_BINS: usize = 8;

#[derive(Debug, Clone)]
pub struct DetectorParams {
    pub octaves: usize,
    pub scales: usize,
    pub sigma0: f64,
    /// Contrast threshold on the interpolated response, divided by `scales`.
    pub contrast_threshold: f64,
    /// Principal curvature ratio above which edge-like extrema are rejected.
    pub edge_ratio: f64,
    pub max_count: usize,
    /// Side of the square spatial buckets used to spread keypoints.
    pub bucket_px: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales: 3,
            sigma0: 1.6,
            contrast_threshold: 0.04,
            edge_ratio: 10.0,
            max_count: 4000,
            bucket_px: 64,
        }
    }
}

/// Keypoint with its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

struct Octave {
    w: usize,
    h: usize,
    gauss: Vec<Vec<f32>>,
    dog: Vec<Vec<f32>>,
}

struct ScaleSpace {
    octaves: Vec<Octave>,
    scales: usize,
    sigma0: f64,
}

impl ScaleSpace {
    fn build(gray: &Image, params: &DetectorParams) -> Self {
        let s = params.scales.max(1);
        let min_dim = gray.width().min(gray.height());
        // keep the coarsest octave at least 8 px on its short side
        let max_oct = ((min_dim as f64 / 8.0).log2().floor() as usize + 1).max(1);
        let n_oct = params.octaves.clamp(1, max_oct);
        let k = 2f64.powf(1.0 / s as f64);
        let sig = |i: usize| params.sigma0 * k.powi(i as i32);

        // the input is assumed to carry 0.5 px of blur already
        let init = (params.sigma0.powi(2) - 0.25).max(0.01).sqrt();
        let mut base = gaussian_blur(gray, init);
        let mut octaves = Vec::with_capacity(n_oct);
        for o in 0..n_oct {
            let (w, h) = base.dims();
            let mut gauss = vec![base.data().to_vec()];
            let mut prev = base.clone();
            for i in 1..s + 3 {
                let inc = (sig(i).powi(2) - sig(i - 1).powi(2)).sqrt();
                prev = gaussian_blur(&prev, inc);
                gauss.push(prev.data().to_vec());
            }
            let dog = gauss
                .windows(2)
                .map(|p| p[1].iter().zip(&p[0]).map(|(a, b)| a - b).collect())
                .collect();
            if o + 1 < n_oct {
                let src = &gauss[s];
                let (nw, nh) = (w / 2, h / 2);
                base = Image::from_fn(nw, nh, 1, |x, y, _| src[(2 * y) * w + 2 * x]);
            }
            octaves.push(Octave { w, h, gauss, dog });
        }
        Self {
            octaves,
            scales: s,
            sigma0: params.sigma0,
        }
    }

    fn layer_sigma(&self, layer: f64) -> f64 {
        self.sigma0 * 2f64.powf(layer / self.scales as f64)
    }
}

/// Interpolated extremum in octave coordinates.
#[derive(Clone, Copy)]
struct Extremum {
    octave: usize,
    x: f64,
    y: f64,
    layer: f64,
    response: f64,
}

fn localize(
    oct: &Octave,
    octave: usize,
    mut x: usize,
    mut y: usize,
    mut l: usize,
    s: usize,
    params: &DetectorParams,
) -> Option<Extremum> {
    let w = oct.w;
    for _ in 0..5 {
        let d = |ll: usize, xx: usize, yy: usize| oct.dog[ll][yy * w + xx] as f64;
        let v = d(l, x, y);
        let g = Vector3::new(
            (d(l, x + 1, y) - d(l, x - 1, y)) * 0.5,
            (d(l, x, y + 1) - d(l, x, y - 1)) * 0.5,
            (d(l + 1, x, y) - d(l - 1, x, y)) * 0.5,
        );
        let dxx = d(l, x + 1, y) + d(l, x - 1, y) - 2.0 * v;
        let dyy = d(l, x, y + 1) + d(l, x, y - 1) - 2.0 * v;
        let dss = d(l + 1, x, y) + d(l - 1, x, y) - 2.0 * v;
        let dxy = (d(l, x + 1, y + 1) - d(l, x - 1, y + 1) - d(l, x + 1, y - 1) + d(l, x - 1, y - 1)) * 0.25;
        let dxs = (d(l + 1, x + 1, y) - d(l + 1, x - 1, y) - d(l - 1, x + 1, y) + d(l - 1, x - 1, y)) * 0.25;
        let dys = (d(l + 1, x, y + 1) - d(l + 1, x, y - 1) - d(l - 1, x, y + 1) + d(l - 1, x, y - 1)) * 0.25;
        let hess = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let off = -(hess.try_inverse()? * g);
        if off.iter().all(|o| o.abs() < 0.5) {
            let response = v + 0.5 * g.dot(&off);
            if response.abs() * (s as f64) < params.contrast_threshold {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = params.edge_ratio;
            if det <= 0.0 || tr * tr * r >= (r + 1.0).powi(2) * det {
                return None;
            }
            return Some(Extremum {
                octave,
                x: x as f64 + off[0],
                y: y as f64 + off[1],
                layer: l as f64 + off[2],
                response,
            });
        }
        if off.iter().any(|o| !o.is_finite() || o.abs() > (w.max(oct.h)) as f64) {
            return None;
        }
        let nx = x as i64 + off[0].round() as i64;
        let ny = y as i64 + off[1].round() as i64;
        let nl = l as i64 + off[2].round() as i64;
        if nl < 1
            || nl > s as i64
            || nx < BORDER as i64
            || ny < BORDER as i64
            || nx >= (oct.w - BORDER) as i64
            || ny >= (oct.h - BORDER) as i64
        {
            return None;
        }
        (x, y, l) = (nx as usize, ny as usize, nl as usize);
    }
    None
}

fn find_extrema(space: &ScaleSpace, params: &DetectorParams) -> Vec<Extremum> {
    let s = space.scales;
    let prefilter = (0.5 * params.contrast_threshold / s as f64) as f32;
    let mut out = Vec::new();
    for (o, oct) in space.octaves.iter().enumerate() {
        let (w, h) = (oct.w, oct.h);
        if w <= 2 * BORDER || h <= 2 * BORDER {
            continue;
        }
        for l in 1..=s {
            let found: Vec<Extremum> = (BORDER..h - BORDER)
                .into_par_iter()
                .flat_map_iter(|y| {
                    let mut row = Vec::new();
                    for x in BORDER..w - BORDER {
                        let v = oct.dog[l][y * w + x];
                        if v.abs() <= prefilter {
                            continue;
                        }
                        let mut is_max = true;
                        let mut is_min = true;
                        'scan: for ll in l - 1..=l + 1 {
                            for yy in y - 1..=y + 1 {
                                for xx in x - 1..=x + 1 {
                                    if ll == l && yy == y && xx == x {
                                        continue;
                                    }
                                    let n = oct.dog[ll][yy * w + xx];
                                    is_max &= v > n;
                                    is_min &= v < n;
                                    if !is_max && !is_min {
                                        break 'scan;
                                    }
                                }
                            }
                        }
                        if is_max || is_min {
                            if let Some(e) = localize(oct, o, x, y, l, s, params) {
                                row.push(e);
                            }
                        }
                    }
                    row
                })
                .collect();
            out.extend(found);
        }
    }
    out
}

fn gradient(img: &[f32], w: usize, x: usize, y: usize) -> (f32, f32) {
    let dx = img[y * w + x + 1] - img[y * w + x - 1];
    let dy = img[(y + 1) * w + x] - img[(y - 1) * w + x];
    (dx, dy)
}

/// Dominant orientations (radians in `[0, 2π)`) around an extremum.
fn orientations(space: &ScaleSpace, e: &Extremum) -> Vec<f32> {
    let oct = &space.octaves[e.octave];
    let l = (e.layer.round() as usize).clamp(1, space.scales);
    let img = &oct.gauss[l];
    let sigma = 1.5 * space.layer_sigma(e.layer);
    let radius = (3.0 * sigma).round() as i64;
    let (cx, cy) = (e.x.round() as i64, e.y.round() as i64);
    let mut hist = [0.0f64; ORI_BINS];
    let denom = 2.0 * sigma * sigma;
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= oct.h as i64 - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= oct.w as i64 - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, oct.w, x as usize, y as usize);
            let mag = ((gx * gx + gy * gy) as f64).sqrt();
            let ang = (gy as f64).atan2(gx as f64).rem_euclid(2.0 * std::f64::consts::PI);
            let wgt = (-((dx * dx + dy * dy) as f64) / denom).exp();
            let bin = ((ang / (2.0 * std::f64::consts::PI) * ORI_BINS as f64).round() as usize) % ORI_BINS;
            hist[bin] += wgt * mag;
        }
    }
    // [1 4 6 4 1] / 16 circular smoothing
    let mut smooth = [0.0f64; ORI_BINS];
    for (i, v) in smooth.iter_mut().enumerate() {
        let at = |k: i64| hist[(i as i64 + k).rem_euclid(ORI_BINS as i64) as usize];
        *v = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
    }
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0];
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        let c = smooth[i];
        if c > l && c > r && c >= 0.8 * max {
            let off = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = (i as f64 + off).rem_euclid(ORI_BINS as f64);
            out.push((bin * 2.0 * std::f64::consts::PI / ORI_BINS as f64) as f32);
        }
    }
    if out.is_empty() {
        out.push(0.0);
    }
    out
}

fn descriptor_at(space: &ScaleSpace, octave: usize, x: f64, y: f64, layer: f64, ori: f32) -> Descriptor {
    let oct = &space.octaves[octave];
    let l = (layer.round() as usize).clamp(1, space.scales);
    let img = &oct.gauss[l];
    let d = DESC_GRID as f32;
    let n = DESC_BINS;
    let hist_width = 3.0 * space.layer_sigma(layer) as f32;
    let diag = ((oct.w * oct.w + oct.h * oct.h) as f32).sqrt();
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d + 1.0) * 0.5)
        .round()
        .min(diag) as i64;
    let (cos_t, sin_t) = ((-ori).cos() / hist_width, (-ori).sin() / hist_width);
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    let stride = DESC_GRID + 2;
    let mut hist = vec![0.0f32; stride * stride * (n + 2)];
    let exp_scale = -1.0 / (d * d * 0.5);

    for i in -radius..=radius {
        for j in -radius..=radius {
            let c_rot = j as f32 * cos_t - i as f32 * sin_t;
            let r_rot = j as f32 * sin_t + i as f32 * cos_t;
            let rbin = r_rot + d / 2.0 - 0.5;
            let cbin = c_rot + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let (px, py) = (cx + j, cy + i);
            if px <= 0 || py <= 0 || px >= oct.w as i64 - 1 || py >= oct.h as i64 - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, oct.w, px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            let ang = gy.atan2(gx);
            let wgt = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let obin = ((ang - ori).rem_euclid(2.0 * PI)) * n as f32 / (2.0 * PI);
            let v = mag * wgt;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0, o0) = (r0 as i64, c0 as i64, o0 as i64);
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (dob, wo) in [(0, 1.0 - fo), (1, fo)] {
                        let rr = (r0 + dr + 1) as usize;
                        let cc = (c0 + dc + 1) as usize;
                        let oo = ((o0 + dob).rem_euclid(n as i64)) as usize;
                        hist[(rr * stride + cc) * (n + 2) + oo] += v * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut raw = [0.0f32; DESCRIPTOR_LEN];
    for r in 0..DESC_GRID {
        for c in 0..DESC_GRID {
            for o in 0..n {
                raw[(r * DESC_GRID + c) * n + o] = hist[((r + 1) * stride + c + 1) * (n + 2) + o];
            }
        }
    }
    // normalize, clip large bins, renormalize
    let first = Descriptor::from_raw(raw);
    let mut clipped = first.0;
    clipped.iter_mut().for_each(|v| *v = v.min(0.2));
    Descriptor::from_raw(clipped)
}

fn validate(img: &Image) -> Result<Image> {
    if img.width() < MIN_DETECT_SIZE || img.height() < MIN_DETECT_SIZE {
        return Err(invalid(format!(
            "keypoint detection needs at least {MIN_DETECT_SIZE}x{MIN_DETECT_SIZE} pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(img.to_gray())
}

/// Keeps the strongest keypoints while capping each bucket at four times its
/// fair share of `max_count`.
fn select(mut cands: Vec<(Keypoint, Extremum)>, w: usize, h: usize, params: &DetectorParams) -> Vec<(Keypoint, Extremum)> {
    cands.sort_by(|a, b| {
        b.0.score
            .total_cmp(&a.0.score)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.x.total_cmp(&b.0.x))
            .then(a.0.orientation.total_cmp(&b.0.orientation))
    });
    let bp = params.bucket_px.max(1);
    let (bx, by) = (w.div_ceil(bp), h.div_ceil(bp));
    let cells = bx * by;
    let cap = (4 * params.max_count).div_ceil(cells).max(1);
    let mut counts = vec![0usize; cells];
    let mut out = Vec::with_capacity(params.max_count.min(cands.len()));
    for c in cands {
        if out.len() >= params.max_count {
            break;
        }
        let cx = (c.0.x as usize / bp).min(bx - 1);
        let cy = (c.0.y as usize / bp).min(by - 1);
        let cell = cy * bx + cx;
        if counts[cell] < cap {
            counts[cell] += 1;
            out.push(c);
        }
    }
    out
}

fn detect_inner(img: &Image, params: &DetectorParams) -> Result<(ScaleSpace, Vec<(Keypoint, Extremum)>)> {
    let gray = validate(img)?;
    let space = ScaleSpace::build(&gray, params);
    let (w, h) = gray.dims();
    let mut cands = Vec::new();
    for e in find_extrema(&space, params) {
        let scale = (1usize << e.octave) as f64;
        let x = (e.x * scale).clamp(0.0, (w - 1) as f64) as f32;
        let y = (e.y * scale).clamp(0.0, (h - 1) as f64) as f32;
        for ori in orientations(&space, &e) {
            cands.push((
                Keypoint {
                    x,
                    y,
                    octave: e.octave,
                    sigma: (space.layer_sigma(e.layer) * scale) as f32,
                    orientation: ori,
                    score: e.response.abs() as f32,
                },
                e,
            ));
        }
    }
    let selected = select(cands, w, h, params);
    Ok((space, selected))
}

/// Multi-scale DoG keypoints, strongest `max_count` kept with spatial bucketing.
pub fn detect_keypoints(img: &Image, max_count: usize) -> Result<Vec<Keypoint>> {
    let params = DetectorParams {
        max_count,
        ..DetectorParams::default()
    };
    Ok(detect_inner(img, &params)?.1.into_iter().map(|(k, _)| k).collect())
}

pub fn detect_and_describe(img: &Image, params: &DetectorParams) -> Result<Vec<Feature>> {
    let (space, kps) = detect_inner(img, params)?;
    Ok(kps
        .par_iter()
        .map(|(k, e)| Feature {
            keypoint: *k,
            descriptor: descriptor_at(&space, e.octave, e.x, e.y, e.layer, k.orientation),
        })
        .collect())
}

/// Descriptors for externally supplied keypoints.
pub fn describe(img: &Image, keypoints: &[Keypoint], params: &DetectorParams) -> Result<Vec<Descriptor>> {
    let gray = validate(img)?;
    let space = ScaleSpace::build(&gray, params);
    let last = space.octaves.len() - 1;
    Ok(keypoints
        .par_iter()
        .map(|k| {
            let o = k.octave.min(last);
            let scale = (1usize << o) as f64;
            let layer = (space.scales as f64 * (k.sigma as f64 / (space.sigma0 * scale)).log2())
                .clamp(1.0, space.scales as f64);
            descriptor_at(&space, o, k.x as f64 / scale, k.y as f64 / scale, layer, k.orientation)
        })
        .collect())
}
