//! Deterministic synthetic scenes with known ground truth, used by the test
//! suites and the CLI self-checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::imaging::{gaussian_blur, sample_bilinear, Image};
use crate::registration::Homography;

fn white_noise(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).expect("valid normal");
    let data = (0..w * h).map(|_| normal.sample(&mut rng)).collect();
    Image::from_vec(w, h, 1, data).expect("sized")
}

fn standardize(img: &mut Image) {
    let n = img.data().len().max(1) as f64;
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    img.data_mut()
        .iter_mut()
        .for_each(|v| *v = ((*v as f64 - mean) / sd) as f32);
}

/// Band-limited noise: sum of unit-variance noise fields blurred at `sigmas`.
fn multiscale(w: usize, h: usize, seed: u64, sigmas: &[f64]) -> Image {
    let mut acc = Image::zeros(w, h, 1);
    for (i, &s) in sigmas.iter().enumerate() {
        let mut layer = gaussian_blur(&white_noise(w, h, seed.wrapping_mul(31).wrapping_add(i as u64)), s);
        standardize(&mut layer);
        acc.data_mut()
            .iter_mut()
            .zip(layer.data())
            .for_each(|(a, b)| *a += b);
    }
    standardize(&mut acc);
    acc
}

fn colorize(w: usize, h: usize, channels: usize, seed: u64, sigmas: &[f64], mean: f32, contrast: f32) -> Image {
    let shared = multiscale(w, h, seed, sigmas);
    if channels == 1 {
        return shared.map(|v| (mean + contrast * v).clamp(0.0, 1.0));
    }
    let planes: Vec<Image> = (0..3)
        .map(|c| {
            let own = multiscale(w, h, seed.wrapping_add(1000 + c as u64), sigmas);
            let tint = [0.05f32, 0.0, -0.05][c];
            Image::from_fn(w, h, 1, |x, y, _| {
                let v = 0.75 * shared.get(x, y, 0) + 0.45 * own.get(x, y, 0);
                (mean + tint + contrast * v).clamp(0.0, 1.0)
            })
        })
        .collect();
    Image::from_planes(&planes).expect("three planes")
}

/// Richly textured image (noise at 1, 2 and 4 px scales) in `[0, 1]`.
pub fn texture(w: usize, h: usize, channels: usize, seed: u64) -> Image {
    colorize(w, h, channels, seed, &[1.0, 2.0, 4.0], 0.5, 0.13)
}

/// Smooth, natural-looking image: coarse noise on top of a gentle gradient.
pub fn smooth_image(w: usize, h: usize, channels: usize, seed: u64) -> Image {
    let base = colorize(w, h, channels, seed, &[6.0, 12.0], 0.5, 0.12);
    Image::from_fn(w, h, channels, |x, y, c| {
        let g = 0.1 * (x as f32 / w.max(1) as f32 - 0.5) + 0.06 * (y as f32 / h.max(1) as f32 - 0.5);
        (base.get(x, y, c) + g).clamp(0.0, 1.0)
    })
}

/// Samples `img` at `(x, y)` with edge clamping.
fn sample_clamped(img: &Image, c: usize, x: f64, y: f64) -> f32 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    sample_bilinear(img.plane(c), w, h, x, y).unwrap_or(0.0)
}

/// Image whose content is `src` translated by `(dx, dy)`: `out(p) = src(p - d)`.
pub fn translate(src: &Image, dx: f64, dy: f64) -> Image {
    let (w, h) = src.dims();
    Image::from_fn(w, h, src.channels(), |x, y, c| {
        sample_clamped(src, c, x as f64 - dx, y as f64 - dy)
    })
}

/// Image rotated by `degrees` about its center: `out(p) = src(R⁻¹ (p - c) + c)`.
pub fn rotate(src: &Image, degrees: f64) -> Image {
    let (w, h) = src.dims();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, co) = degrees.to_radians().sin_cos();
    Image::from_fn(w, h, src.channels(), |x, y, c| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // inverse rotation
        let sx = co * dx + s * dy + cx;
        let sy = -s * dx + co * dy + cy;
        sample_clamped(src, c, sx, sy)
    })
}

/// Two-plane focus pair: `fg` is sharp on the left half and blurred on the
/// right, `bg` the reverse. Returns `(fg, bg, truth)` where truth is 1 on the
/// left half (the half where `fg` is in focus).
pub fn two_plane_focus_pair(w: usize, h: usize, seed: u64, blur_sigma: f64) -> (Image, Image, Image) {
    let left = texture(w, h, 3, seed);
    let right = texture(w, h, 3, seed + 1);
    let seam = w / 2;
    let sharp = Image::from_fn(w, h, 3, |x, y, c| if x < seam { left.get(x, y, c) } else { right.get(x, y, c) });
    let blurred = gaussian_blur(&sharp, blur_sigma);
    let fg = Image::from_fn(w, h, 3, |x, y, c| if x < seam { sharp.get(x, y, c) } else { blurred.get(x, y, c) });
    let bg = Image::from_fn(w, h, 3, |x, y, c| if x < seam { blurred.get(x, y, c) } else { sharp.get(x, y, c) });
    let truth = Image::from_fn(w, h, 1, |x, _, _| if x < seam { 1.0 } else { 0.0 });
    (fg, bg, truth)
}

/// Parallax pair with a textured square in front of a textured background.
#[derive(Debug, Clone)]
pub struct OcclusionPair {
    pub main: Image,
    pub wide: Image,
    /// 1 where main-frame background is hidden behind the square in `wide`.
    pub occluded: Image,
    /// Ground-truth flow from `main` into `wide` (x component; y is zero).
    pub flow_x: Image,
}

/// Background shifts by `bg_disp` px and a `square`-px foreground square by
/// `fg_disp` px (both along +x) between `main` and `wide`.
pub fn occlusion_pair(w: usize, h: usize, square: usize, bg_disp: usize, fg_disp: usize, seed: u64) -> OcclusionPair {
    let bg = texture(w + fg_disp + 2, h, 1, seed);
    let fg = texture(w + fg_disp + 2, h, 1, seed + 77).map(|v| (v + 0.15).min(1.0));
    let (x0, y0) = ((w - square) / 2, (h - square) / 2);
    let in_sq = |x: i64, y: i64| x >= x0 as i64 && x < (x0 + square) as i64 && y >= y0 as i64 && y < (y0 + square) as i64;
    // layer textures are indexed in main-frame coordinates, offset to stay positive
    let off = fg_disp as i64 + 1;
    let at = |img: &Image, x: i64, y: i64| img.get((x + off).clamp(0, img.width() as i64 - 1) as usize, y as usize, 0);
    let main = Image::from_fn(w, h, 1, |x, y, _| {
        let (x, y) = (x as i64, y as i64);
        if in_sq(x, y) { at(&fg, x, y) } else { at(&bg, x, y) }
    });
    let wide = Image::from_fn(w, h, 1, |x, y, _| {
        let (x, y) = (x as i64, y as i64);
        let xf = x - fg_disp as i64;
        if in_sq(xf, y) { at(&fg, xf, y) } else { at(&bg, x - bg_disp as i64, y) }
    });
    let occluded = Image::from_fn(w, h, 1, |x, y, _| {
        let (x, y) = (x as i64, y as i64);
        let hidden = !in_sq(x, y) && in_sq(x + bg_disp as i64 - fg_disp as i64, y);
        if hidden { 1.0 } else { 0.0 }
    });
    let flow_x = Image::from_fn(w, h, 1, |x, y, _| {
        if in_sq(x as i64, y as i64) { fg_disp as f32 } else { bg_disp as f32 }
    });
    OcclusionPair { main, wide, occluded, flow_x }
}

/// A generated main / ultra-wide capture with its all-in-focus ground truth.
#[derive(Debug, Clone)]
pub struct AifScene {
    /// Sharp all-in-focus reference in the main frame.
    pub gt: Image,
    /// Focused on the foreground: background defocused.
    pub main: Image,
    /// Sharp everywhere, different viewpoint, field of view and color.
    pub wide: Image,
    /// True map from ultra-wide pixels to main pixels for background content.
    pub homography: Homography,
    /// Foreground coverage in the main frame.
    pub fg_mask: Image,
}

#[derive(Debug, Clone)]
pub struct AifSceneParams {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Defocus blur of the background in `main`.
    pub bg_blur: f64,
    /// Extra parallax of the foreground relative to the background, pixels.
    pub fg_parallax: f64,
    /// Per-channel gain and shared offset applied to the ultra-wide image.
    pub color_gain: [f32; 3],
    pub color_offset: f32,
}

impl Default for AifSceneParams {
    fn default() -> Self {
        Self {
            width: 384,
            height: 288,
            seed: 1,
            bg_blur: 3.0,
            fg_parallax: 8.0,
            color_gain: [0.9, 1.0, 1.1],
            color_offset: 0.03,
        }
    }
}

/// Depth-layered scene: a textured background plane and a textured
/// foreground disk. The ultra-wide view sees the scene through a homography
/// (wider field of view, slight rotation and offset), with the foreground
/// shifted by extra parallax so that part of the background is occluded.
pub fn aif_scene(p: &AifSceneParams) -> AifScene {
    let (w, h) = (p.width, p.height);
    let margin = (w.max(h) / 4) as f64;
    let (cw, ch) = (w + 2 * margin as usize, h + 2 * margin as usize);
    let bg_layer = texture(cw, ch, 3, p.seed);
    let fg_layer = colorize(cw, ch, 3, p.seed + 5, &[1.0, 2.0, 3.0], 0.55, 0.14);
    let (fx, fy) = (w as f64 * 0.42, h as f64 * 0.55);
    let radius = h as f64 * 0.26;
    // soft-edged disk coverage at a main-frame point
    let disk = |x: f64, y: f64| -> f32 {
        let d = ((x - fx).powi(2) + (y - fy).powi(2)).sqrt();
        (radius + 0.5 - d).clamp(0.0, 1.0) as f32
    };
    let layer = |img: &Image, c: usize, x: f64, y: f64| sample_clamped(img, c, x + margin, y + margin);

    let fg_mask = Image::from_fn(w, h, 1, |x, y, _| disk(x as f64, y as f64));
    let gt = Image::from_fn(w, h, 3, |x, y, c| {
        let a = fg_mask.get(x, y, 0);
        let (xf, yf) = (x as f64, y as f64);
        a * layer(&fg_layer, c, xf, yf) + (1.0 - a) * layer(&bg_layer, c, xf, yf)
    });
    let bg_main = Image::from_fn(w, h, 3, |x, y, c| layer(&bg_layer, c, x as f64, y as f64));
    let bg_blurred = gaussian_blur(&bg_main, p.bg_blur);
    let main = Image::from_fn(w, h, 3, |x, y, c| {
        let a = fg_mask.get(x, y, 0);
        a * gt.get(x, y, c) + (1.0 - a) * bg_blurred.get(x, y, c)
    });

    // ultra-wide pixel q sees main-frame point H(q); the foreground sits at
    // H(q) - parallax in layer coordinates
    let homography = Homography::from_rows([
        [1.12, 0.025, -0.06 * w as f64],
        [-0.02, 1.12, -0.05 * h as f64],
        [1.5e-5, -1.0e-5, 1.0],
    ])
    .expect("valid homography");
    let wide = Image::from_fn(w, h, 3, |x, y, c| {
        let (mx, my) = homography.apply(x as f64, y as f64).expect("finite");
        let (qx, qy) = (mx - p.fg_parallax, my);
        let a = disk(qx, qy);
        let v = a * layer(&fg_layer, c, qx, qy) + (1.0 - a) * layer(&bg_layer, c, mx, my);
        (p.color_gain[c] * v + p.color_offset).clamp(0.0, 1.0)
    });
    AifScene {
        gt,
        main,
        wide,
        homography,
        fg_mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_bounded() {
        let a = texture(40, 30, 3, 9);
        assert_eq!(a, texture(40, 30, 3, 9));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let s = smooth_image(40, 30, 1, 2);
        assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn occlusion_band_has_expected_width() {
        let p = occlusion_pair(80, 60, 20, 2, 12, 3);
        let row = 30;
        let band: Vec<usize> = (0..80).filter(|&x| p.occluded.get(x, row, 0) == 1.0).collect();
        assert_eq!(band.len(), 10);
        assert_eq!(band[0], 50);
    }

    #[test]
    fn translate_shifts_content() {
        let img = texture(32, 16, 1, 4);
        let t = translate(&img, 3.0, 0.0);
        assert_eq!(t.get(10, 5, 0), img.get(7, 5, 0));
    }
}
