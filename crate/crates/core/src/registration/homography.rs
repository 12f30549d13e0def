//! Normalized DLT homography fitting, RANSAC and homography warping.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::imaging::{io::write_atomic, warp_bilinear, Image};

/// 3×3 projective map normalized so that `m[(2, 2)] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("homography has non-finite entries"));
        }
        let s = m[(2, 2)];
        if s.abs() < 1e-12 {
            return Err(invalid("homography has m[2][2] == 0"));
        }
        let m = m / s;
        let det2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        if det2.abs() < 1e-12 {
            return Err(invalid("homography upper-left 2x2 block is singular"));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.m[(r, c)]))
    }

    /// Maps a point; `None` when it lands at infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        if p[2].abs() < 1e-12 {
            return None;
        }
        Some((p[0] / p[2], p[1] / p[2]))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| invalid("homography is not invertible"))?;
        Self::new(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.m * other.m)
    }
}

/// A point pair: `src` in the image being warped, `dst` in the reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

impl Correspondence {
    pub fn new(src: [f64; 2], dst: [f64; 2]) -> Self {
        Self { src, dst }
    }
}

#[derive(Debug, Clone)]
pub struct RansacParams {
    pub iters: usize,
    /// Symmetric transfer error threshold, pixels.
    pub inlier_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iters: 2000,
            inlier_px: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacResult {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    /// Largest inlier count reached by any single minimal-sample model.
    pub best_sample_inliers: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Similarity that moves the centroid to the origin with mean distance √2.
fn normalizer(pts: impl Iterator<Item = [f64; 2]> + Clone) -> Matrix3<f64> {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean = pts.map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean > 1e-12 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    [t[(0, 0)] * p[0] + t[(0, 2)], t[(1, 1)] * p[1] + t[(1, 2)]]
}

/// Least-squares DLT over all given correspondences, with Hartley normalization.
pub fn fit_homography_dlt(pairs: &[Correspondence]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::EstimationFailed(format!(
            "need at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    let ts = normalizer(pairs.iter().map(|p| p.src));
    let td = normalizer(pairs.iter().map(|p| p.dst));
    let mut a = DMatrix::<f64>::zeros(2 * pairs.len(), 9);
    for (i, p) in pairs.iter().enumerate() {
        let [x, y] = transform(&ts, p.src);
        let [u, v] = transform(&td, p.dst);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        a.row_mut(r + 1)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .expect("9 eigenvalues");
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::EstimationFailed("degenerate point normalization".into()))?;
    Homography::new(td_inv * hn * ts).map_err(|e| Error::EstimationFailed(e.to_string()))
}

/// `max(‖H·src − dst‖, ‖H⁻¹·dst − src‖)`.
fn transfer_error(h: &Homography, hinv: &Homography, p: &Correspondence) -> f64 {
    let fwd = h
        .apply(p.src[0], p.src[1])
        .map_or(f64::INFINITY, |(x, y)| ((x - p.dst[0]).powi(2) + (y - p.dst[1]).powi(2)).sqrt());
    let bwd = hinv
        .apply(p.dst[0], p.dst[1])
        .map_or(f64::INFINITY, |(x, y)| ((x - p.src[0]).powi(2) + (y - p.src[1]).powi(2)).sqrt());
    fwd.max(bwd)
}

/// Inlier mask and the summed error over inliers.
fn score(h: &Homography, pairs: &[Correspondence], thresh: f64) -> Option<(Vec<bool>, usize, f64)> {
    let hinv = h.inverse().ok()?;
    let mut mask = Vec::with_capacity(pairs.len());
    let (mut n, mut err) = (0usize, 0.0f64);
    for p in pairs {
        let e = transfer_error(h, &hinv, p);
        let inl = e <= thresh;
        if inl {
            n += 1;
            err += e;
        }
        mask.push(inl);
    }
    Some((mask, n, err))
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let (ux, uy) = (b[0] - a[0], b[1] - a[1]);
    let (vx, vy) = (c[0] - a[0], c[1] - a[1]);
    let cross = (ux * vy - uy * vx).abs();
    let scale = (ux * ux + uy * uy).sqrt() * (vx * vx + vy * vy).sqrt();
    scale < 1e-9 || cross <= 1e-3 * scale
}

fn degenerate(sample: &[Correspondence]) -> bool {
    let triples = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    triples.iter().any(|&(i, j, k)| {
        collinear(sample[i].src, sample[j].src, sample[k].src)
            || collinear(sample[i].dst, sample[j].dst, sample[k].dst)
    })
}

/// RANSAC over 4-point DLT models, scored by inlier count (ties: lower total
/// error), then refit on the inlier set until it stops growing.
pub fn estimate_homography_ransac(pairs: &[Correspondence], params: &RansacParams) -> Result<RansacResult> {
    if pairs.len() < 4 {
        return Err(Error::EstimationFailed(format!(
            "need at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    if !(params.inlier_px > 0.0) {
        return Err(invalid("inlier threshold must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Homography, Vec<bool>, usize, f64)> = None;
    for _ in 0..params.iters.max(1) {
        let idx = rand::seq::index::sample(&mut rng, pairs.len(), 4);
        let sample: Vec<Correspondence> = idx.iter().map(|i| pairs[i]).collect();
        if degenerate(&sample) {
            continue;
        }
        let Ok(h) = fit_homography_dlt(&sample) else {
            continue;
        };
        let Some((mask, n, err)) = score(&h, pairs, params.inlier_px) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((_, _, bn, be)) => n > *bn || (n == *bn && err < *be),
        };
        if better {
            best = Some((h, mask, n, err));
        }
    }
    let (mut h, mut mask, best_sample, mut err) = best.ok_or_else(|| {
        Error::EstimationFailed("every RANSAC sample was degenerate".into())
    })?;
    let mut count = best_sample;

    for _ in 0..10 {
        let inl: Vec<Correspondence> = pairs
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect();
        let Ok(refit) = fit_homography_dlt(&inl) else {
            break;
        };
        let Some((m2, n2, e2)) = score(&refit, pairs, params.inlier_px) else {
            break;
        };
        if n2 < count || (n2 == count && e2 >= err) {
            break;
        }
        let stable = m2 == mask;
        (h, mask, count, err) = (refit, m2, n2, e2);
        if stable {
            break;
        }
    }
    Ok(RansacResult {
        homography: h,
        inliers: mask,
        best_sample_inliers: best_sample,
    })
}

/// Backward-warps `img` into a `target_w`×`target_h` canvas, where `h` maps
/// source pixels to canvas pixels.
pub fn warp_homography(img: &Image, h: &Homography, target_w: usize, target_h: usize) -> Result<(Image, Image)> {
    let hinv = h.inverse()?;
    Ok(warp_bilinear(img, target_w, target_h, |x, y| {
        hinv.apply(x, y).unwrap_or((f64::NAN, f64::NAN))
    }))
}

/// Debug dump: `x1,y1,x2,y2,inlier` per correspondence.
pub fn write_correspondences_csv(path: &Path, pairs: &[Correspondence], inliers: &[bool]) -> Result<()> {
    let mut s = String::from("x1,y1,x2,y2,inlier\n");
    for (i, p) in pairs.iter().enumerate() {
        let inl = inliers.get(i).copied().unwrap_or(false) as u8;
        let _ = writeln!(s, "{},{},{},{},{}", p.src[0], p.src[1], p.dst[0], p.dst[1], inl);
    }
    write_atomic(path, s.as_bytes())
}
