//! Full-reference image quality metrics at peak value 1.

use crate::error::{invalid, Result};
use crate::imaging::Image;

/// SSIM window side and Gaussian width.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(invalid(format!(
            "metric inputs differ: {:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    if a.is_empty() {
        return Err(invalid("metric of an empty image"));
    }
    Ok(())
}

/// Mean squared error over all samples, accumulated in `f64`.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(1 / mse)`; zero error maps to `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" correlation: output is `(w − n + 1) × (h − n + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two single planes over the fully covered window positions.
fn ssim_plane(a: &[f32], b: &[f32], w: usize, h: usize) -> f64 {
    let k = gaussian_window();
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&fa, w, h, &k);
    let mu_b = filter_valid(&fb, w, h, &k);
    let aa = filter_valid(&prod(&fa, &fa), w, h, &k);
    let bb = filter_valid(&prod(&fb, &fb), w, h, &k);
    let ab = filter_valid(&prod(&fa, &fb), w, h, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / n as f64
}

fn check_ssim(a: &Image, b: &Image) -> Result<()> {
    check_pair(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {:?}",
            a.dims()
        )));
    }
    Ok(())
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5), averaged over
/// channels. Only window positions fully inside the image are scored.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim(a, b)?;
    let (w, h) = a.dims();
    let sum: f64 = (0..a.channels()).map(|c| ssim_plane(a.plane(c), b.plane(c), w, h)).sum();
    Ok(sum / a.channels() as f64)
}

/// SSIM of the Rec.601 luma of both images.
pub fn ssim_luma(a: &Image, b: &Image) -> Result<f64> {
    check_ssim(a, b)?;
    let (ga, gb) = (a.to_gray(), b.to_gray());
    Ok(ssim_plane(ga.data(), gb.data(), a.width(), a.height()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(img: &Image, sd: f32, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = img.data().iter().map(|&v| v + sd * (rng.random::<f32>() - 0.5)).collect();
        Image::from_vec(img.width(), img.height(), img.channels(), data).unwrap()
    }

    /// Plain per-sample loop, independent of `mse`.
    fn oracle_psnr(a: &Image, b: &Image) -> f64 {
        let mut s = 0.0f64;
        let mut n = 0usize;
        for c in 0..a.channels() {
            for y in 0..a.height() {
                for x in 0..a.width() {
                    let d = a.get(x, y, c) as f64 - b.get(x, y, c) as f64;
                    s += d * d;
                    n += 1;
                }
            }
        }
        10.0 * (n as f64 / s).log10()
    }

    /// Direct 2-D window sums at each valid position.
    fn oracle_ssim_plane(a: &Image, b: &Image, c: usize) -> f64 {
        let r = 5usize;
        let mut wts = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (j, row) in wts.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let d2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
                *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        let mut n = 0;
        for y in r..a.height() - r {
            for x in r..a.width() - r {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wv = wts[j][i] / s;
                        let p = a.get(x + i - r, y + j - r, c) as f64;
                        let q = b.get(x + i - r, y + j - r, c) as f64;
                        ma += wv * p;
                        mb += wv * q;
                        aa += wv * p * p;
                        bb += wv * q * q;
                        ab += wv * p * q;
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                total += ((2.0 * ma * mb + c1) * (2.0 * (ab - ma * mb) + c2))
                    / ((ma * ma + mb * mb + c1) * ((aa - ma * ma) + (bb - mb * mb) + c2));
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn identical_images_are_infinite_and_one() {
        let img = synth::texture(24, 20, 3, 1);
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() <= 1e-12);
        assert!((ssim_luma(&img, &img).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn constant_offset_psnr() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        let a = Image::filled(16, 16, 3, 0.5);
        let b = Image::filled(16, 16, 3, 0.6);
        let d = 0.6f32 as f64 - 0.5;
        let want = 10.0 * (1.0 / (d * d)).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() <= 1e-12);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() <= 5e-6);
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let a = synth::texture(33, 21, 3, 2);
        let b = noisy(&a, 0.2, 3);
        assert!((psnr(&a, &b).unwrap() - oracle_psnr(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn ssim_matches_direct_window_sums() {
        let a = synth::texture(30, 26, 3, 4);
        let b = noisy(&a, 0.3, 5);
        let want: f64 = (0..3).map(|c| oracle_ssim_plane(&a, &b, c)).sum::<f64>() / 3.0;
        assert!((ssim(&a, &b).unwrap() - want).abs() <= 1e-6);
        let (ga, gb) = (a.to_gray(), b.to_gray());
        assert!((ssim_luma(&a, &b).unwrap() - oracle_ssim_plane(&ga, &gb, 0)).abs() <= 1e-6);
    }

    #[test]
    fn two_constant_closed_form() {
        let a = Image::zeros(16, 16, 1);
        let b = Image::filled(16, 16, 1, 1.0);
        let want = (SSIM_C1 * SSIM_C2) / ((1.0 + SSIM_C1) * SSIM_C2);
        assert!((ssim(&a, &b).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn symmetric_and_monotone_in_noise() {
        let a = synth::texture(40, 32, 3, 6);
        let b = noisy(&a, 0.2, 7);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        let mut last = f64::INFINITY;
        for (i, sd) in [0.02f32, 0.05, 0.1, 0.2, 0.4].into_iter().enumerate() {
            let p = psnr(&a, &noisy(&a, sd, 100 + i as u64)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn bad_shapes_rejected() {
        let a = Image::zeros(10, 10, 1);
        assert!(ssim(&a, &a).is_err());
        assert!(psnr(&a, &Image::zeros(10, 11, 1)).is_err());
        assert!(psnr(&a, &Image::zeros(10, 10, 3)).is_err());
    }
}
