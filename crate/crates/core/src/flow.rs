//! Dense coarse-to-fine flow and the forward–backward confidence map.
//!
//! A [`FlowField`] estimated from `a` to `b` lives on `a`'s grid and points
//! into `b`: `a(p) ≈ b(p + flow(p))`, so [`warp_by_flow`] applied to `b`
//! produces an image aligned with `a`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::imaging::{box_mean_plane, gaussian_blur, io::write_atomic, resize_area, resize_bilinear, sample_bilinear, warp_bilinear, Image};

/// Per-pixel displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> (f32, f32)) -> Self {
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                out.u[y * width + x] = u;
                out.v[y * width + x] = v;
            }
        }
        out
    }

    pub fn from_planes(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(invalid("flow plane length does not match dimensions"));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(invalid("flow contains non-finite values"));
        }
        Ok(Self { width, height, u, v })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Bilinear lookup; `None` outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f32, f32)> {
        let u = sample_bilinear(&self.u, self.width, self.height, x, y)?;
        let v = sample_bilinear(&self.v, self.width, self.height, x, y)?;
        Some((u, v))
    }

    /// Bilinear resize to a new grid, scaling the vectors by the size ratio.
    pub fn resize(&self, new_w: usize, new_h: usize) -> Result<FlowField> {
        if self.dims() == (new_w, new_h) {
            return Ok(self.clone());
        }
        let (sx, sy) = (new_w as f32 / self.width as f32, new_h as f32 / self.height as f32);
        let u = Image::from_vec(self.width, self.height, 1, self.u.clone())?;
        let v = Image::from_vec(self.width, self.height, 1, self.v.clone())?;
        let u = resize_bilinear(&u, new_w, new_h)?.into_data();
        let v = resize_bilinear(&v, new_w, new_h)?.into_data();
        Ok(FlowField {
            width: new_w,
            height: new_h,
            u: u.into_iter().map(|x| x * sx).collect(),
            v: v.into_iter().map(|x| x * sy).collect(),
        })
    }

    pub fn max_magnitude(&self) -> f32 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f32::max)
    }

    /// Raw dump: width and height as little-endian `u32`, then the `u` plane
    /// and the `v` plane as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.u.len());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for x in self.u.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut hdr = [0u8; 8];
        bytes
            .read_exact(&mut hdr)
            .map_err(|_| invalid("flow dump shorter than its header"))?;
        let w = u32::from_le_bytes(hdr[..4].try_into().expect("4 bytes")) as usize;
        let h = u32::from_le_bytes(hdr[4..].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 8 * w * h {
            return Err(invalid(format!(
                "flow dump body is {} bytes, expected {}",
                bytes.len(),
                8 * w * h
            )));
        }
        let vals: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let (u, v) = vals.split_at(w * h);
        Self::from_planes(w, h, u.to_vec(), v.to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }

    /// Writes the raw dump to any writer.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}

/// Binary per-pixel confidence (1 = consistent flow).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap(Image);

impl ConfidenceMap {
    pub fn ones(width: usize, height: usize) -> Self {
        Self(Image::filled(width, height, 1, 1.0))
    }

    /// Binarizes a single-channel image at 0.5.
    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(invalid("confidence map must be single-channel"));
        }
        Ok(Self(img.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })))
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

    #[inline]
    pub fn is_confident(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y, 0) >= 0.5
    }

    pub fn fraction_confident(&self) -> f64 {
        let n = self.0.data().len().max(1);
        self.0.data().iter().filter(|&&v| v >= 0.5).count() as f64 / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct FlowParams {
    pub levels: usize,
    /// Side of the square least-squares window, pixels.
    pub window: usize,
    /// Maximum refinement iterations per level.
    pub iters: usize,
    /// Replace each vector by the best-matching vector from the surrounding
    /// window ring after the finest level; sharpens motion boundaries.
    pub sharpen_boundaries: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 5,
            window: 21,
            iters: 30,
            sharpen_boundaries: true,
        }
    }
}

/// Single-channel working plane.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    d: Vec<f32>,
}

impl Plane {
    fn from_image(img: &Image) -> Self {
        Self {
            w: img.width(),
            h: img.height(),
            d: img.data().to_vec(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.d[y * self.w + x]
    }

    /// Central-difference gradients with one-sided borders.
    fn gradients(&self) -> (Vec<f32>, Vec<f32>) {
        let (w, h) = (self.w, self.h);
        let mut gx = vec![0.0f32; w * h];
        let mut gy = vec![0.0f32; w * h];
        gx.par_chunks_mut(w)
            .zip(gy.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (rx, ry))| {
                for x in 0..w {
                    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                    let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                    rx[x] = (self.at(xr, y) - self.at(xl, y)) / (xr - xl).max(1) as f32;
                    ry[x] = (self.at(x, yd) - self.at(x, yu)) / (yd - yu).max(1) as f32;
                }
            });
        (gx, gy)
    }
}

fn pyramid(img: &Image, levels: usize) -> Result<Vec<Plane>> {
    let mut out = vec![Plane::from_image(img)];
    let mut cur = img.clone();
    for _ in 1..levels {
        let (w, h) = cur.dims();
        let blurred = gaussian_blur(&cur, 0.7);
        cur = resize_area(&blurred, w.div_ceil(2), h.div_ceil(2))?;
        out.push(Plane::from_image(&cur));
    }
    Ok(out)
}

/// Samples `p` at `p + flow` with clamped coordinates; also reports whether
/// the location was inside the frame.
#[inline]
fn sample_clamped(p: &Plane, x: f64, y: f64) -> (f32, bool) {
    let inside = x >= 0.0 && y >= 0.0 && x <= (p.w - 1) as f64 && y <= (p.h - 1) as f64;
    let xc = x.clamp(0.0, (p.w - 1) as f64);
    let yc = y.clamp(0.0, (p.h - 1) as f64);
    (sample_bilinear(&p.d, p.w, p.h, xc, yc).unwrap_or(0.0), inside)
}

/// Windowed least-squares refinement of `flow` on one pyramid level.
fn refine_level(src: &Plane, dst: &Plane, flow: &mut FlowField, radius: usize, iters: usize) {
    let (w, h) = (src.w, src.h);
    let n = w * h;
    let (sgx, sgy) = src.gradients();
    let (dgx, dgy) = dst.gradients();
    let dgx = Plane { w, h, d: dgx };
    let dgy = Plane { w, h, d: dgy };
    // keeps the normal matrix invertible in flat regions
    const REG: f64 = 1e-6;
    let half = (radius / 2).max(1);

    for _ in 0..iters {
        // per-pixel products of the linearized brightness constancy
        let terms: Vec<[f64; 6]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let fx = x as f64 + flow.u[i] as f64;
                let fy = y as f64 + flow.v[i] as f64;
                let (val, inside) = sample_clamped(dst, fx, fy);
                if !inside {
                    return [0.0; 6];
                }
                let (wx, _) = sample_clamped(&dgx, fx, fy);
                let (wy, _) = sample_clamped(&dgy, fx, fy);
                let gx = 0.5 * (sgx[i] + wx) as f64;
                let gy = 0.5 * (sgy[i] + wy) as f64;
                let it = (val - src.d[i]) as f64;
                [gx * gx, gx * gy, gy * gy, gx * it, gy * it, 1.0]
            })
            .collect();
        let sums: Vec<Vec<f64>> = (0..6)
            .into_par_iter()
            .map(|k| {
                let plane: Vec<f64> = terms.iter().map(|t| t[k]).collect();
                // tent window (box twice): its spectrum is non-negative, so
                // the coupled dense update cannot amplify any error mode
                let once = box_mean_plane(&plane, w, h, half);
                box_mean_plane(&once, w, h, half)
            })
            .collect();
        let max_step = flow
            .u
            .par_iter_mut()
            .zip(flow.v.par_iter_mut())
            .enumerate()
            .map(|(i, (u, v))| {
                if sums[5][i] < 0.25 {
                    return 0.0f64;
                }
                let (a, b, c) = (sums[0][i] + REG, sums[1][i], sums[2][i] + REG);
                let (bx, by) = (sums[3][i], sums[4][i]);
                let det = a * c - b * b;
                if det.abs() < 1e-18 {
                    return 0.0;
                }
                let du = -(c * bx - b * by) / det;
                let dv = -(a * by - b * bx) / det;
                // cap runaway steps in ambiguous regions
                let step = (du * du + dv * dv).sqrt();
                let scale = if step > 2.0 { 2.0 / step } else { 1.0 };
                *u += (du * scale) as f32;
                *v += (dv * scale) as f32;
                step
            })
            .reduce(|| 0.0, f64::max);
        if max_step < 1e-3 {
            break;
        }
    }
}

/// Photometric cost of vector `(u, v)` at pixel `(x, y)` over a 5×5 patch.
fn patch_cost(src: &Plane, dst: &Plane, x: usize, y: usize, u: f32, v: f32) -> f64 {
    // 5x5 residuals, then the cheapest 3x3 window that still contains (x, y)
    let mut diff = [[0.0f64; 5]; 5];
    for (j, row) in diff.iter_mut().enumerate() {
        let yy = (y as i64 + j as i64 - 2).clamp(0, src.h as i64 - 1) as usize;
        for (i, d) in row.iter_mut().enumerate() {
            let xx = (x as i64 + i as i64 - 2).clamp(0, src.w as i64 - 1) as usize;
            let (val, inside) = sample_clamped(dst, xx as f64 + u as f64, yy as f64 + v as f64);
            *d = if inside { (val - src.at(xx, yy)).abs() as f64 } else { 1.0 };
        }
    }
    let mut best = f64::INFINITY;
    for cy in 1..4 {
        for cx in 1..4 {
            let mut c = 0.0;
            for row in &diff[cy - 1..=cy + 1] {
                c += row[cx - 1] + row[cx] + row[cx + 1];
            }
            best = best.min(c);
        }
    }
    best
}

/// Picks, per pixel, the vector among its own and eight ring neighbors at
/// distance `radius` that best explains a small patch.
fn sharpen(src: &Plane, dst: &Plane, flow: &FlowField, radius: usize) -> FlowField {
    let (w, h) = (src.w, src.h);
    let r = radius as i64;
    let offsets = [(0, 0), (-r, 0), (r, 0), (0, -r), (0, r), (-r, -r), (r, -r), (-r, r), (r, r)];
    let picked: Vec<(f32, f32)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let mut best = (flow.u[i], flow.v[i]);
            let mut best_cost = patch_cost(src, dst, x, y, best.0, best.1);
            for &(ox, oy) in &offsets[1..] {
                let (cx, cy) = (x as i64 + ox, y as i64 + oy);
                if cx < 0 || cy < 0 || cx >= w as i64 || cy >= h as i64 {
                    continue;
                }
                let cand = flow.get(cx as usize, cy as usize);
                let (du, dv) = (cand.0 - best.0, cand.1 - best.1);
                if du * du + dv * dv < 0.0625 {
                    continue;
                }
                // strict improvement keeps ties on the pixel's own vector
                let c = patch_cost(src, dst, x, y, cand.0, cand.1);
                if c < best_cost * 0.8 {
                    best = cand;
                    best_cost = c;
                }
            }
            best
        })
        .collect();
    let (u, v) = picked.into_iter().unzip();
    FlowField { width: w, height: h, u, v }
}

/// Coarse-to-fine windowed least-squares flow from `src` into `dst`.
///
/// The pyramid depth is reduced when the images are too small for `levels`.
pub fn estimate_flow(src: &Image, dst: &Image, params: &FlowParams) -> Result<FlowField> {
    if src.dims() != dst.dims() {
        return Err(invalid(format!(
            "flow inputs differ in size: {:?} vs {:?}",
            src.dims(),
            dst.dims()
        )));
    }
    if src.is_empty() {
        return Err(invalid("flow of an empty image"));
    }
    let min_dim = src.width().min(src.height());
    let max_levels = (usize::BITS - min_dim.leading_zeros()) as usize; // floor(log2) + 1
    let levels = params.levels.clamp(1, max_levels.saturating_sub(2).max(1));
    if levels < params.levels {
        log::debug!("flow: {min_dim}px short side, using {levels} of {} levels", params.levels);
    }
    let ps = pyramid(&src.to_gray(), levels)?;
    let pd = pyramid(&dst.to_gray(), levels)?;
    let radius = params.window / 2;

    let mut flow: Option<FlowField> = None;
    for lvl in (0..levels).rev() {
        let (s, d) = (&ps[lvl], &pd[lvl]);
        let mut f = match flow.take() {
            None => FlowField::zeros(s.w, s.h),
            Some(prev) => prev.resize(s.w, s.h)?,
        };
        refine_level(s, d, &mut f, radius.max(1), params.iters);
        if lvl == 0 && params.sharpen_boundaries && radius >= 2 {
            let mut r = radius;
            while r >= 1 {
                f = sharpen(s, d, &f, r);
                r /= 2;
            }
        }
        flow = Some(f);
    }
    let mut f = flow.expect("at least one level");
    for x in f.u.iter_mut().chain(f.v.iter_mut()) {
        if !x.is_finite() {
            *x = 0.0;
        }
    }
    Ok(f)
}

/// Backward-warps `src` through `flow`: output `p` samples `src(p + flow(p))`.
pub fn warp_by_flow(src: &Image, flow: &FlowField) -> (Image, Image) {
    warp_bilinear(src, flow.width, flow.height, |x, y| {
        let i = y as usize * flow.width + x as usize;
        (x + flow.u[i] as f64, y + flow.v[i] as f64)
    })
}

/// Which input may carry extra defocus blur that the other lacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefocusSide {
    /// `dst` is the sharper image; candidates blur `dst`.
    Dst,
    /// `src` is the sharper image; candidates blur `src`.
    Src,
    /// Either may be sharper, region by region.
    Both,
}

/// Candidate blurs for [`estimate_flow_defocus`].
#[derive(Debug, Clone, PartialEq)]
pub struct DefocusParams {
    /// Gaussian sigmas tried on the sharper side, in pixels of the flow grid.
    /// Zero means no blur.
    pub sigmas: Vec<f64>,
    /// Scale of the local contrast normalization.
    pub norm_sigma: f64,
    /// Radius of the box window over which candidate residuals are compared.
    pub select_radius: usize,
}

impl DefocusParams {
    /// `levels` sigmas spaced by `step`, starting at 0.
    pub fn ladder(levels: usize, step: f64) -> Self {
        Self { sigmas: (0..levels.max(1)).map(|i| i as f64 * step).collect(), ..Self::default() }
    }
}

impl Default for DefocusParams {
    fn default() -> Self {
        Self { sigmas: vec![0.0, 0.75, 1.5, 2.25, 3.0, 3.75], norm_sigma: 6.0, select_radius: 7 }
    }
}

/// Gray image with local mean removed and local contrast scaled to a fixed
/// level, mapped around 0.5.
pub fn local_normalize(img: &Image, sigma: f64) -> Image {
    let g = img.to_gray();
    let mean = gaussian_blur(&g, sigma);
    let (w, h) = g.dims();
    let d = Image::from_fn(w, h, 1, |x, y, _| g.get(x, y, 0) - mean.get(x, y, 0));
    let var = gaussian_blur(&d.map(|t| t * t), sigma);
    Image::from_fn(w, h, 1, |x, y, _| 0.5 + 0.1 * d.get(x, y, 0) / (var.get(x, y, 0) + 1e-4).sqrt())
}

/// Flow that tolerates a gain/offset change and a defocus difference
/// between `src` and `dst`.
///
/// Both images are contrast-normalized. For each candidate sigma the sharper
/// side is blurred and a flow is estimated; every pixel then keeps the
/// candidate whose warped residual is lowest over a small window.
pub fn estimate_flow_defocus(
    src: &Image,
    dst: &Image,
    params: &FlowParams,
    defocus: &DefocusParams,
    side: DefocusSide,
) -> Result<FlowField> {
    if src.dims() != dst.dims() {
        return Err(invalid("flow inputs differ in size"));
    }
    if defocus.sigmas.is_empty() || defocus.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("defocus sigmas must be a non-empty list of non-negative values"));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for &s in &defocus.sigmas {
        if matches!(side, DefocusSide::Src | DefocusSide::Both) {
            pairs.push((s, 0.0));
        }
        if matches!(side, DefocusSide::Dst | DefocusSide::Both) && !(side == DefocusSide::Both && s == 0.0) {
            pairs.push((0.0, s));
        }
    }
    let (w, h) = src.dims();
    let mut best: Option<(FlowField, Vec<f32>)> = None;
    for (ss, sd) in pairs {
        let a = local_normalize(&gaussian_blur(src, ss), defocus.norm_sigma);
        let b = local_normalize(&gaussian_blur(dst, sd), defocus.norm_sigma);
        let f = estimate_flow(&a, &b, params)?;
        let (wb, valid) = warp_by_flow(&b, &f);
        let sq: Vec<f64> = (0..w * h)
            .map(|i| {
                if valid.data()[i] < 0.5 {
                    1.0
                } else {
                    let d = (wb.data()[i] - a.data()[i]) as f64;
                    d * d
                }
            })
            .collect();
        let cost: Vec<f32> = box_mean_plane(&sq, w, h, defocus.select_radius).into_iter().map(|v| v as f32).collect();
        best = Some(match best {
            None => (f, cost),
            Some((mut bf, mut bc)) => {
                for i in 0..w * h {
                    if cost[i] < bc[i] {
                        bc[i] = cost[i];
                        bf.u[i] = f.u[i];
                        bf.v[i] = f.v[i];
                    }
                }
                (bf, bc)
            }
        });
    }
    Ok(best.expect("at least one candidate").0)
}

/// Forward–backward check: pixel `p` is confident iff
/// `‖bwd(p) + fwd(p + bwd(p))‖ ≤ tau`, where `bwd` lives on this grid and
/// points into the other image and `fwd` points back. Lookups that leave the
/// frame are not confident.
pub fn consistency_map(fwd: &FlowField, bwd: &FlowField, tau: f32) -> Result<ConfidenceMap> {
    if fwd.dims() != bwd.dims() {
        return Err(invalid("forward and backward flows differ in size"));
    }
    if !(tau > 0.0) {
        return Err(invalid("consistency threshold must be positive"));
    }
    let (w, h) = bwd.dims();
    let mut out = Image::zeros(w, h, 1);
    out.data_mut()
        .par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            for (x, c) in row.iter_mut().enumerate() {
                let (bu, bv) = bwd.get(x, y);
                let qx = x as f64 + bu as f64;
                let qy = y as f64 + bv as f64;
                *c = match fwd.sample(qx, qy) {
                    Some((fu, fv)) => {
                        let (rx, ry) = (bu + fu, bv + fv);
                        if (rx * rx + ry * ry).sqrt() <= tau { 1.0 } else { 0.0 }
                    }
                    None => 0.0,
                };
            }
        });
    Ok(ConfidenceMap(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn identical_images_give_zero_flow() {
        let img = synth::texture(96, 80, 1, 2);
        let f = estimate_flow(&img, &img, &FlowParams::default()).unwrap();
        assert!(f.max_magnitude() <= 0.05);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = Image::zeros(32, 32, 1);
        let b = Image::zeros(33, 32, 1);
        assert!(estimate_flow(&a, &b, &FlowParams::default()).is_err());
        assert!(consistency_map(&FlowField::zeros(3, 3), &FlowField::zeros(3, 4), 1.0).is_err());
    }

    #[test]
    fn small_translation_recovered() {
        let src = synth::texture(128, 128, 1, 5);
        let dst = synth::translate(&src, 3.0, 0.0);
        let f = estimate_flow(&src, &dst, &FlowParams::default()).unwrap();
        let (u, v) = f.get(64, 64);
        assert!((u - 3.0).abs() < 0.25 && v.abs() < 0.25, "({u}, {v})");
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let img = synth::texture(30, 20, 3, 1);
        let (out, valid) = warp_by_flow(&img, &FlowField::zeros(30, 20));
        assert_eq!(out, img);
        assert!(valid.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_integer_flow_is_shift() {
        let img = synth::texture(30, 20, 1, 1);
        let (out, valid) = warp_by_flow(&img, &FlowField::constant(30, 20, 3.0, 0.0));
        for y in 0..20 {
            for x in 0..27 {
                assert_eq!(out.get(x, y, 0), img.get(x + 3, y, 0));
            }
            for x in 27..30 {
                assert_eq!(valid.get(x, y, 0), 0.0);
            }
        }
    }

    #[test]
    fn consistency_examples() {
        let (w, h) = (40, 30);
        let z = FlowField::zeros(w, h);
        let c = consistency_map(&z, &z, 1.0).unwrap();
        assert_eq!(c.fraction_confident(), 1.0);

        let bwd = FlowField::constant(w, h, 5.0, 0.0);
        let fwd = FlowField::constant(w, h, -5.0, 0.0);
        let c = consistency_map(&fwd, &bwd, 1.0).unwrap();
        for y in 0..h {
            for x in 0..w - 5 {
                assert!(c.is_confident(x, y));
            }
            for x in w - 4..w {
                assert!(!c.is_confident(x, y));
            }
        }

        let c = consistency_map(&z, &bwd, 1.0).unwrap();
        assert_eq!(c.fraction_confident(), 0.0);
    }

    #[test]
    fn raw_dump_layout() {
        let f = FlowField::from_fn(3, 2, |x, y| (x as f32, -(y as f32)));
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 8 + 2 * 4 * 6);
        assert_eq!(&bytes[..4], &3u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        // v plane starts after six u values
        assert_eq!(&bytes[8 + 24 + 12..8 + 24 + 16], &(-1.0f32).to_le_bytes());
        assert_eq!(FlowField::from_bytes(&bytes).unwrap(), f);
        assert!(FlowField::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn resize_scales_vectors() {
        let f = FlowField::constant(10, 8, 1.0, -0.5);
        let g = f.resize(40, 32).unwrap();
        assert!(g.u.iter().all(|&u| (u - 4.0).abs() < 1e-6));
        assert!(g.v.iter().all(|&v| (v + 2.0).abs() < 1e-6));
    }

    fn median_error(f: &FlowField, dx: f32, dy: f32, margin: usize) -> f32 {
        let (w, h) = f.dims();
        let mut e: Vec<f32> = (margin..h - margin)
            .flat_map(|y| (margin..w - margin).map(move |x| (x, y)))
            .map(|(x, y)| {
                let (u, v) = f.get(x, y);
                ((u - dx).powi(2) + (v - dy).powi(2)).sqrt()
            })
            .collect();
        e.sort_by(f32::total_cmp);
        e[e.len() / 2]
    }

    #[test]
    fn normalization_ignores_gain_and_offset() {
        let img = synth::texture(64, 48, 1, 3);
        let shifted = img.map(|v| 0.8 * v + 0.1);
        let (a, b) = (local_normalize(&img, 4.0), local_normalize(&shifted, 4.0));
        assert!(a.max_abs_diff(&b) < 0.02, "{}", a.max_abs_diff(&b));
        let flat = local_normalize(&Image::filled(20, 20, 3, 0.3), 4.0);
        assert!(flat.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn defocused_source_with_color_change() {
        let sharp = synth::texture(160, 128, 1, 8);
        let src = gaussian_blur(&sharp, 2.25);
        let dst = synth::translate(&sharp, 4.0, -3.0).map(|v| 0.9 * v + 0.05);
        let plain = estimate_flow(&src, &dst, &FlowParams::default()).unwrap();
        let matched =
            estimate_flow_defocus(&src, &dst, &FlowParams::default(), &DefocusParams::default(), DefocusSide::Dst)
                .unwrap();
        let (e_plain, e_matched) = (median_error(&plain, 4.0, -3.0, 16), median_error(&matched, 4.0, -3.0, 16));
        assert!(e_matched < 0.25, "{e_matched}");
        assert!(e_matched < e_plain, "{e_matched} vs {e_plain}");
    }

    #[test]
    fn defocus_on_either_side() {
        let sharp = synth::texture(128, 96, 1, 9);
        let blurred = gaussian_blur(&sharp, 1.5);
        let dst = synth::translate(&blurred, -2.0, 1.0);
        let f = estimate_flow_defocus(&sharp, &dst, &FlowParams::default(), &DefocusParams::default(), DefocusSide::Both)
            .unwrap();
        assert!(median_error(&f, -2.0, 1.0, 16) < 0.25);
    }

    #[test]
    fn single_zero_sigma_matches_normalized_flow() {
        let a = synth::texture(64, 64, 1, 1);
        let b = synth::translate(&a, 1.5, 0.5);
        let d = DefocusParams::ladder(1, 1.0);
        assert_eq!(d.sigmas, vec![0.0]);
        let f = estimate_flow_defocus(&a, &b, &FlowParams::default(), &d, DefocusSide::Dst).unwrap();
        let g = estimate_flow(&local_normalize(&a, d.norm_sigma), &local_normalize(&b, d.norm_sigma), &FlowParams::default())
            .unwrap();
        assert_eq!(f, g);
        let bad = DefocusParams { sigmas: vec![], ..DefocusParams::default() };
        assert!(estimate_flow_defocus(&a, &b, &FlowParams::default(), &bad, DefocusSide::Src).is_err());
    }
}
