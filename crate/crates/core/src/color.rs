//! Low-band color alignment of the warped ultra-wide image to the main image.
//!
//! An affine RGB map (3×3 gain plus offset) is fitted per tile on the Haar
//! `ll` band, weighted by the flow confidence. Tile fits are averaged onto a
//! shared grid of corner nodes and interpolated bilinearly when applied, so
//! the field has no seams at tile borders.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::flow::ConfidenceMap;
use crate::imaging::{dwt2, gaussian_blur, idwt2, io::write_atomic, Image, WaveletBands};

/// Row-major 3×4 affine color map: `out_k = Σ_j m[k][j]·in_j + m[k][3]`.
pub type Affine = [[f64; 4]; 3];

pub const IDENTITY: Affine = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];

/// Tiles with fewer masked pixels than this use the global fit.
pub const MIN_TILE_PIXELS: usize = 32;

/// Which signal a transform is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorDomain {
    /// Haar `ll` band, where a flat patch of value `v` reads `2v`.
    LowBand,
    /// Full-resolution image in `[0, 1]`.
    Image,
}

impl ColorDomain {
    fn range(self) -> (f32, f32) {
        match self {
            ColorDomain::LowBand => (0.0, 2.0),
            ColorDomain::Image => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorParams {
    /// Tiles per side.
    pub grid: usize,
    pub ridge: f64,
    /// Gaussian sigma, in low-band pixels, applied to both low bands before
    /// fitting. Keeps a defocus difference from shrinking the fitted gain.
    pub fit_sigma: f64,
}

impl Default for ColorParams {
    fn default() -> Self {
        Self { grid: 8, ridge: 1e-3, fit_sigma: 4.0 }
    }
}

/// Spatially varying affine color map, fitted in the `ll` domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorTransform {
    grid_w: usize,
    grid_h: usize,
    /// `(grid_w + 1) × (grid_h + 1)` corner matrices, row-major.
    nodes: Vec<Affine>,
    pub ridge: f64,
    /// Set when nothing could be fitted and the identity was returned.
    pub identity_fallback: bool,
}

impl ColorTransform {
    pub fn identity(grid_w: usize, grid_h: usize) -> Self {
        Self::uniform(grid_w, grid_h, IDENTITY)
    }

    pub fn uniform(grid_w: usize, grid_h: usize, m: Affine) -> Self {
        let (gw, gh) = (grid_w.max(1), grid_h.max(1));
        Self { grid_w: gw, grid_h: gh, nodes: vec![m; (gw + 1) * (gh + 1)], ridge: 0.0, identity_fallback: false }
    }

    /// Builds the corner field directly.
    pub fn from_nodes(grid_w: usize, grid_h: usize, nodes: Vec<Affine>) -> Result<Self> {
        if grid_w == 0 || grid_h == 0 {
            return Err(invalid("color grid must be at least 1x1"));
        }
        if nodes.len() != (grid_w + 1) * (grid_h + 1) {
            return Err(invalid(format!(
                "expected {} corner matrices for a {grid_w}x{grid_h} grid, got {}",
                (grid_w + 1) * (grid_h + 1),
                nodes.len()
            )));
        }
        if nodes.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("color transform has non-finite entries"));
        }
        Ok(Self { grid_w, grid_h, nodes, ridge: 0.0, identity_fallback: false })
    }

    /// Each corner takes the mean of the (up to four) tiles that touch it.
    pub fn from_tiles(grid_w: usize, grid_h: usize, tiles: &[Affine]) -> Result<Self> {
        if tiles.len() != grid_w * grid_h {
            return Err(invalid("tile count does not match the grid"));
        }
        let mut nodes = Vec::with_capacity((grid_w + 1) * (grid_h + 1));
        for ny in 0..=grid_h {
            for nx in 0..=grid_w {
                let mut acc = [[0.0; 4]; 3];
                let mut n = 0.0;
                for ty in ny.saturating_sub(1)..(ny + 1).min(grid_h) {
                    for tx in nx.saturating_sub(1)..(nx + 1).min(grid_w) {
                        let t = &tiles[ty * grid_w + tx];
                        for k in 0..3 {
                            for j in 0..4 {
                                acc[k][j] += t[k][j];
                            }
                        }
                        n += 1.0;
                    }
                }
                acc.iter_mut().flatten().for_each(|v| *v /= n);
                nodes.push(acc);
            }
        }
        Self::from_nodes(grid_w, grid_h, nodes)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_w, self.grid_h)
    }

    pub fn nodes(&self) -> &[Affine] {
        &self.nodes
    }

    pub fn node(&self, nx: usize, ny: usize) -> &Affine {
        &self.nodes[ny * (self.grid_w + 1) + nx]
    }

    /// Interpolated matrix at pixel `(x, y)` of a `width × height` raster.
    pub fn matrix_at(&self, x: usize, y: usize, width: usize, height: usize) -> Affine {
        let u = (x as f64 + 0.5) / width as f64 * self.grid_w as f64;
        let v = (y as f64 + 0.5) / height as f64 * self.grid_h as f64;
        let (x0, fx) = split(u, self.grid_w);
        let (y0, fy) = split(v, self.grid_h);
        let mut m = [[0.0; 4]; 3];
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (nx, ny, wgt) in taps {
            if wgt == 0.0 {
                continue;
            }
            let n = self.node(nx, ny);
            for k in 0..3 {
                for j in 0..4 {
                    m[k][j] += wgt * n[k][j];
                }
            }
        }
        m
    }

    /// Plain-text dump: a header line, then one corner per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("colortransform {} {} ridge {}\n", self.grid_w, self.grid_h, self.ridge);
        for n in &self.nodes {
            let row: Vec<String> = n.iter().flatten().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("color transform text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if head.len() != 5 || head[0] != "colortransform" || head[3] != "ridge" {
            return Err(bad("malformed header"));
        }
        let gw: usize = head[1].parse().map_err(|_| bad("grid width"))?;
        let gh: usize = head[2].parse().map_err(|_| bad("grid height"))?;
        let ridge: f64 = head[4].parse().map_err(|_| bad("ridge"))?;
        let mut nodes = Vec::new();
        for line in lines {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("matrix entry"))?;
            if vals.len() != 12 {
                return Err(bad("matrix rows need 12 entries"));
            }
            let mut m = [[0.0; 4]; 3];
            for (i, v) in vals.into_iter().enumerate() {
                m[i / 4][i % 4] = v;
            }
            nodes.push(m);
        }
        let mut t = Self::from_nodes(gw, gh, nodes)?;
        t.ridge = ridge;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

fn split(u: f64, n: usize) -> (usize, f64) {
    let u = u.clamp(0.0, n as f64);
    let i = (u.floor() as usize).min(n - 1);
    (i, u - i as f64)
}

/// Weighted normal equations of one channel-shared design `[r, g, b, 1]`.
#[derive(Clone, Copy)]
struct Normal {
    ata: Matrix4<f64>,
    atb: [Vector4<f64>; 3],
    count: usize,
}

impl Normal {
    fn zero() -> Self {
        Self { ata: Matrix4::zeros(), atb: [Vector4::zeros(); 3], count: 0 }
    }

    fn add(&mut self, o: &Normal) {
        self.ata += o.ata;
        for k in 0..3 {
            self.atb[k] += o.atb[k];
        }
        self.count += o.count;
    }

    fn solve(&self, ridge: f64) -> Option<Affine> {
        let mut a = self.ata;
        for i in 0..4 {
            a[(i, i)] += ridge;
        }
        let eig = a.symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e.abs())));
        if !(hi > 0.0) || lo <= 1e-12 * hi {
            return None;
        }
        let lu = a.lu();
        let mut m = [[0.0; 4]; 3];
        for (k, row) in m.iter_mut().enumerate() {
            let mut rhs = self.atb[k];
            rhs[k] += ridge;
            let sol = lu.solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            row.copy_from_slice(sol.as_slice());
        }
        Some(m)
    }
}

fn check_fit_inputs(src: &Image, reference: &Image, mask: &Image) -> Result<()> {
    if src.dims() != reference.dims() || src.dims() != mask.dims() {
        return Err(invalid("color fit inputs differ in size"));
    }
    if src.channels() != 3 || reference.channels() != 3 {
        return Err(invalid("color fit needs 3-channel images"));
    }
    if mask.channels() != 1 {
        return Err(invalid("color fit mask must be single-channel"));
    }
    if mask.data().iter().any(|&m| !(0.0..=1.0).contains(&m)) {
        return Err(invalid("color fit mask must lie in [0, 1]"));
    }
    Ok(())
}

/// Fits a tiled affine color map taking `src_ll` towards `ref_ll`.
///
/// Pixels are weighted by `mask_ll`; zero-weight pixels do not touch the
/// normal equations at all.
pub fn fit_color_transform(
    src_ll: &Image,
    ref_ll: &Image,
    mask_ll: &Image,
    grid: usize,
    ridge: f64,
) -> Result<ColorTransform> {
    check_fit_inputs(src_ll, ref_ll, mask_ll)?;
    if grid == 0 {
        return Err(invalid("color grid must be at least 1"));
    }
    if !(ridge >= 0.0) {
        return Err(invalid("ridge must be non-negative"));
    }
    let (w, h) = src_ll.dims();
    let (gw, gh) = (grid.min(w.max(1)), grid.min(h.max(1)));
    let tile_of = |x: usize, y: usize| (y * gh / h.max(1)) * gw + x * gw / w.max(1);

    let rows: Vec<Vec<Normal>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = vec![Normal::zero(); gw * gh];
            for x in 0..w {
                let m = mask_ll.get(x, y, 0) as f64;
                if m <= 0.0 {
                    continue;
                }
                let s = Vector4::new(
                    src_ll.get(x, y, 0) as f64,
                    src_ll.get(x, y, 1) as f64,
                    src_ll.get(x, y, 2) as f64,
                    1.0,
                );
                let n = &mut acc[tile_of(x, y)];
                n.ata += m * s * s.transpose();
                for k in 0..3 {
                    n.atb[k] += (m * ref_ll.get(x, y, k) as f64) * s;
                }
                n.count += 1;
            }
            acc
        })
        .collect();
    // sequential sum in row order keeps the result independent of threading
    let mut tiles = vec![Normal::zero(); gw * gh];
    for row in &rows {
        for (t, n) in tiles.iter_mut().zip(row) {
            t.add(n);
        }
    }
    let mut global = Normal::zero();
    tiles.iter().for_each(|t| global.add(t));

    let global_fit = if global.count > 0 { global.solve(ridge) } else { None };
    let Some(global_fit) = global_fit else {
        log::warn!("color fit: no usable masked pixels, returning identity");
        let mut t = ColorTransform::identity(gw, gh);
        t.ridge = ridge;
        t.identity_fallback = true;
        return Ok(t);
    };
    let fits: Vec<Affine> = tiles
        .iter()
        .map(|t| {
            if t.count < MIN_TILE_PIXELS {
                global_fit
            } else {
                t.solve(ridge).unwrap_or(global_fit)
            }
        })
        .collect();
    let mut t = ColorTransform::from_tiles(gw, gh, &fits)?;
    t.ridge = ridge;
    Ok(t)
}

/// Applies `t` per pixel and clamps to the domain's range.
pub fn apply_color_transform(t: &ColorTransform, img: &Image, domain: ColorDomain) -> Result<Image> {
    if img.channels() != 3 {
        return Err(invalid("color transform needs a 3-channel image"));
    }
    let (w, h) = img.dims();
    // offsets were fitted on ll, which carries twice the image scale
    let offset_scale = match domain {
        ColorDomain::LowBand => 1.0,
        ColorDomain::Image => 0.5,
    };
    let (lo, hi) = domain.range();
    let mut out = img.clone();
    let rows: Vec<[Vec<f32>; 3]> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut r = [vec![0.0f32; w], vec![0.0f32; w], vec![0.0f32; w]];
            for x in 0..w {
                let m = t.matrix_at(x, y, w, h);
                let s = [img.get(x, y, 0) as f64, img.get(x, y, 1) as f64, img.get(x, y, 2) as f64];
                for k in 0..3 {
                    let v = m[k][0] * s[0] + m[k][1] * s[1] + m[k][2] * s[2] + offset_scale * m[k][3];
                    r[k][x] = (v as f32).clamp(lo, hi);
                }
            }
            r
        })
        .collect();
    for (y, r) in rows.iter().enumerate() {
        for k in 0..3 {
            out.plane_mut(k)[y * w..(y + 1) * w].copy_from_slice(&r[k]);
        }
    }
    Ok(out)
}

/// Everything [`color_align_detailed`] produced along the way.
#[derive(Debug, Clone)]
pub struct ColorAlignment {
    pub image: Image,
    pub transform: ColorTransform,
    /// Bands fed to the inverse transform: corrected `ll`, original details.
    pub bands: WaveletBands,
}

/// Color-corrects `warped` towards `main` on the low band only.
pub fn color_align(warped: &Image, main: &Image, conf: &ConfidenceMap, params: &ColorParams) -> Result<Image> {
    Ok(color_align_detailed(warped, main, conf, params)?.image)
}

pub fn color_align_detailed(
    warped: &Image,
    main: &Image,
    conf: &ConfidenceMap,
    params: &ColorParams,
) -> Result<ColorAlignment> {
    if warped.dims() != main.dims() || warped.dims() != conf.dims() {
        return Err(invalid("color_align inputs differ in size"));
    }
    let bw = dwt2(warped)?;
    let bm = dwt2(main)?;
    // 2×2 block mean of the confidence: its ll band halved
    let mask = dwt2(conf.as_image())?.ll.map(|v| (v * 0.5).clamp(0.0, 1.0));
    let (fit_src, fit_ref) = (gaussian_blur(&bw.ll, params.fit_sigma), gaussian_blur(&bm.ll, params.fit_sigma));
    let t = fit_color_transform(&fit_src, &fit_ref, &mask, params.grid, params.ridge)?;
    let ll = apply_color_transform(&t, &bw.ll, ColorDomain::LowBand)?;
    let bands = WaveletBands { ll, ..bw };
    let image = idwt2(&bands)?;
    Ok(ColorAlignment { image, transform: t, bands })
}

/// Weighted squared residual `Σ mask·‖A·src + b − ref‖²` of a uniform map.
pub fn masked_residual(m: &Affine, src: &Image, reference: &Image, mask: &Image) -> f64 {
    let mut total = 0.0;
    for y in 0..src.height() {
        for x in 0..src.width() {
            let wgt = mask.get(x, y, 0) as f64;
            if wgt == 0.0 {
                continue;
            }
            for (k, row) in m.iter().enumerate() {
                let mut v = row[3];
                for (j, &g) in row.iter().take(3).enumerate() {
                    v += g * src.get(x, y, j) as f64;
                }
                let d = v - reference.get(x, y, k) as f64;
                total += wgt * d * d;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rgb(w: usize, h: usize, seed: u64) -> Image {
        synth::texture(w, h, 3, seed)
    }

    fn max_entry_diff(a: &Affine, b: &Affine) -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_when_src_equals_ref() {
        let img = rgb(64, 48, 1);
        let mask = Image::filled(64, 48, 1, 1.0);
        let t = fit_color_transform(&img, &img, &mask, 4, 1e-3).unwrap();
        for n in t.nodes() {
            assert!(max_entry_diff(n, &IDENTITY) <= 1e-4);
        }
    }

    #[test]
    fn exact_gain_recovered_without_ridge() {
        let reference = rgb(40, 40, 2);
        let src = reference.map(|v| 0.5 * v);
        let mask = Image::filled(40, 40, 1, 1.0);
        let t = fit_color_transform(&src, &reference, &mask, 2, 0.0).unwrap();
        let want = [[2.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]];
        for n in t.nodes() {
            assert!(max_entry_diff(n, &want) <= 1e-4, "{n:?}");
        }
    }

    /// Dense normal equations over the whole image, solved by Gaussian
    /// elimination in plain arrays.
    fn oracle_global_fit(src: &Image, reference: &Image, mask: &Image) -> Affine {
        let mut out = [[0.0; 4]; 3];
        for (k, row) in out.iter_mut().enumerate() {
            let mut a = [[0.0f64; 5]; 4];
            for y in 0..src.height() {
                for x in 0..src.width() {
                    let wgt = mask.get(x, y, 0) as f64;
                    let s = [src.get(x, y, 0) as f64, src.get(x, y, 1) as f64, src.get(x, y, 2) as f64, 1.0];
                    let r = reference.get(x, y, k) as f64;
                    for i in 0..4 {
                        for j in 0..4 {
                            a[i][j] += wgt * s[i] * s[j];
                        }
                        a[i][4] += wgt * s[i] * r;
                    }
                }
            }
            for col in 0..4 {
                let piv = (col..4).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
                a.swap(col, piv);
                for r in 0..4 {
                    if r != col {
                        let f = a[r][col] / a[col][col];
                        for c in col..5 {
                            a[r][c] -= f * a[col][c];
                        }
                    }
                }
            }
            for i in 0..4 {
                row[i] = a[i][4] / a[i][i];
            }
        }
        out
    }

    #[test]
    fn channel_swap_recovers_permutation() {
        let reference = rgb(48, 48, 3);
        let src = Image::from_planes(&[reference.channel(2), reference.channel(1), reference.channel(0)]).unwrap();
        let mask = Image::filled(48, 48, 1, 1.0);
        let t = fit_color_transform(&src, &reference, &mask, 1, 0.0).unwrap();
        let perm = [[0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
        let oracle = oracle_global_fit(&src, &reference, &mask);
        assert!(max_entry_diff(&oracle, &perm) <= 1e-3);
        assert!(max_entry_diff(t.node(0, 0), &perm) <= 1e-3);
        assert!(max_entry_diff(t.node(0, 0), &oracle) <= 1e-6);
    }

    #[test]
    fn global_fit_beats_random_perturbations() {
        let reference = rgb(40, 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = reference.map(|v| 0.8 * v + 0.1);
        let src = Image::from_fn(40, 32, 3, |x, y, c| src.get(x, y, c) + rng.random_range(-0.05..0.05));
        let mask = Image::from_fn(40, 32, 1, |x, _, _| if x % 3 == 0 { 0.0 } else { 1.0 });
        let t = fit_color_transform(&src, &reference, &mask, 1, 0.0).unwrap();
        let best = *t.node(0, 0);
        let r0 = masked_residual(&best, &src, &reference, &mask);
        for _ in 0..100 {
            let mut m = best;
            m.iter_mut().flatten().for_each(|v| *v += rng.random_range(-0.01..0.01));
            assert!(r0 <= masked_residual(&m, &src, &reference, &mask));
        }
    }

    #[test]
    fn zero_weight_pixels_do_not_contribute() {
        let reference = rgb(48, 40, 5);
        let src = reference.map(|v| 0.9 * v + 0.02);
        let mask = Image::from_fn(48, 40, 1, |x, y, _| if (x + 2 * y) % 5 == 0 { 0.0 } else { 1.0 });
        // scramble the masked-out pixels: the fit must not change
        let scrambled = Image::from_fn(48, 40, 3, |x, y, c| {
            if mask.get(x, y, 0) == 0.0 { 1.0 - src.get(x, y, c) * 0.3 } else { src.get(x, y, c) }
        });
        let a = fit_color_transform(&src, &reference, &mask, 2, 1e-3).unwrap();
        let b = fit_color_transform(&scrambled, &reference, &mask, 2, 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_mask_falls_back_to_identity() {
        let img = rgb(16, 16, 6);
        let t = fit_color_transform(&img, &img, &Image::zeros(16, 16, 1), 4, 1e-3).unwrap();
        assert!(t.identity_fallback);
        assert!(t.nodes().iter().all(|n| *n == IDENTITY));
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = rgb(16, 16, 7);
        let mask = Image::filled(16, 16, 1, 1.0);
        assert!(fit_color_transform(&img, &img, &Image::filled(16, 16, 1, 2.0), 2, 0.0).is_err());
        assert!(fit_color_transform(&img, &img, &mask, 2, -1.0).is_err());
        assert!(fit_color_transform(&img, &rgb(16, 8, 7), &mask, 2, 0.0).is_err());
        let t = ColorTransform::identity(2, 2);
        assert!(apply_color_transform(&t, &Image::zeros(4, 4, 1), ColorDomain::Image).is_err());
    }

    #[test]
    fn identity_apply_is_noop_and_gain_doubles() {
        let img = rgb(20, 12, 8);
        let out = apply_color_transform(&ColorTransform::identity(3, 3), &img, ColorDomain::Image).unwrap();
        assert_eq!(out, img);
        let flat = Image::filled(8, 8, 3, 0.25);
        let gain = [[2.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]];
        let out = apply_color_transform(&ColorTransform::uniform(1, 1, gain), &flat, ColorDomain::Image).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn two_tile_field_matches_scalar_interpolation() {
        let (w, h) = (64usize, 16usize);
        let ramp = Image::from_fn(w, h, 3, |x, _, c| (x as f32 + c as f32) / 80.0);
        let left = [[0.5, 0.0, 0.0, 0.1], [0.0, 1.0, 0.0, 0.0], [0.0, 0.2, 0.8, 0.0]];
        let right = [[1.5, 0.0, 0.0, -0.1], [0.0, 0.5, 0.0, 0.2], [0.1, 0.0, 1.0, 0.0]];
        let t = ColorTransform::from_nodes(2, 1, vec![left, IDENTITY, right, left, IDENTITY, right]).unwrap();
        let out = apply_color_transform(&t, &ramp, ColorDomain::LowBand).unwrap();
        for y in 0..h {
            for x in 0..w {
                // node coordinate along x, nodes at 0, 1, 2
                let u = (x as f64 + 0.5) / w as f64 * 2.0;
                let (a, b, f) = if u < 1.0 { (left, IDENTITY, u) } else { (IDENTITY, right, u - 1.0) };
                for k in 0..3 {
                    let mut v = 0.0;
                    for j in 0..4 {
                        let g = (1.0 - f) * a[k][j] + f * b[k][j];
                        v += g * if j < 3 { ramp.get(x, y, j) as f64 } else { 1.0 };
                    }
                    let want = (v as f32).clamp(0.0, 2.0);
                    assert!((out.get(x, y, k) - want).abs() <= 1e-6, "({x},{y},{k})");
                }
            }
        }
    }

    #[test]
    fn corners_are_shared_between_tiles() {
        let a = [[2.0; 4]; 3];
        let b = [[4.0; 4]; 3];
        let t = ColorTransform::from_tiles(2, 1, &[a, b]).unwrap();
        assert_eq!(t.node(1, 0), &[[3.0; 4]; 3]);
        assert_eq!(t.node(0, 1), &a);
        assert_eq!(t.node(2, 0), &b);
    }

    #[test]
    fn text_round_trip() {
        let mut t = ColorTransform::from_tiles(2, 2, &[IDENTITY, [[0.3; 4]; 3], [[1.0 / 3.0; 4]; 3], IDENTITY]).unwrap();
        t.ridge = 1e-3;
        let back = ColorTransform::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert!(ColorTransform::from_text("colortransform 1 1 ridge 0\n1 2 3\n").is_err());
    }

    #[test]
    fn align_of_identical_images_is_stable() {
        let img = rgb(64, 48, 10);
        let out = color_align(&img, &img, &ConfidenceMap::ones(64, 48), &ColorParams::default()).unwrap();
        assert!(out.max_abs_diff(&img) <= 1e-3);
    }

    #[test]
    fn align_with_no_confidence_is_identity() {
        let a = rgb(32, 32, 11);
        let b = a.map(|v| 0.7 * v);
        let none = ConfidenceMap::from_image(&Image::zeros(32, 32, 1)).unwrap();
        let out = color_align_detailed(&b, &a, &none, &ColorParams::default()).unwrap();
        assert!(out.transform.identity_fallback);
        assert!(out.image.max_abs_diff(&b) <= 1e-5);
    }

    #[test]
    fn detail_bands_pass_through_bit_exact() {
        let main = rgb(50, 38, 12);
        let warped = main.map(|v| 0.6 * v + 0.1);
        let out = color_align_detailed(&warped, &main, &ConfidenceMap::ones(50, 38), &ColorParams::default()).unwrap();
        let orig = dwt2(&warped).unwrap();
        for (a, b) in out.bands.details().iter().zip(orig.details()) {
            assert_eq!(a.data(), b.data());
        }
        let again = dwt2(&out.image).unwrap();
        for (a, b) in again.details().iter().zip(orig.details()) {
            assert!(a.max_abs_diff(b) <= 1e-5);
        }
    }
}
