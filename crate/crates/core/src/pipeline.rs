//! End-to-end all-in-focus synthesis and ground-truth synthesis.

use std::path::Path;
use std::time::Instant;

use crate::color::{apply_color_transform, color_align_detailed, ColorDomain, ColorTransform};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::flow::{consistency_map, estimate_flow_defocus, warp_by_flow, ConfidenceMap, DefocusSide, FlowField};
use crate::fusion::{
    compute_fusion_masks, focus_measure, fuse_aif, fuse_multifocus, refine_occluded_with, FusionMaskTriple,
};
use crate::imaging::io::{save_png, BitDepth};
use crate::imaging::{resize_area, warp_bilinear, Image};
use crate::registration::{
    detect_and_describe, estimate_homography_ransac, match_descriptors, warp_homography, Correspondence, Homography,
};

/// Window radius of the focus measure used for mask decisions.
pub const FOCUS_RADIUS: usize = 4;
/// Alignment images are not shrunk below this short side.
pub const MIN_ALIGN_SIDE: usize = 256;
/// Fewer RANSAC inliers than this is treated as a registration failure.
pub const MIN_INLIERS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

/// `timing stage=<name> seconds=<s>` per stage, then the total.
pub fn format_timings(timings: &[StageTiming]) -> String {
    let mut s = String::new();
    for t in timings {
        s.push_str(&format!("timing stage={} seconds={:.3}\n", t.stage, t.seconds));
    }
    let total: f64 = timings.iter().map(|t| t.seconds).sum();
    s.push_str(&format!("timing stage=total seconds={total:.3}\n"));
    s
}

/// Everything computed on the way to the fused image.
#[derive(Debug, Clone)]
pub struct Intermediates {
    pub homography: Homography,
    pub inliers: usize,
    /// Ultra-wide image warped into the main frame by the homography.
    pub warped_h: Image,
    pub validity_h: Image,
    /// Main-grid flow into `warped_h`, and its reverse.
    pub flow_bwd: FlowField,
    pub flow_fwd: FlowField,
    pub warped_flow: Image,
    /// Validity of `warped_flow`: the composed warp landed inside the
    /// ultra-wide frame.
    pub validity: Image,
    pub conf: ConfidenceMap,
    pub color_transform: ColorTransform,
    pub color_aligned: Image,
    pub masks: FusionMaskTriple,
    pub refined: Image,
    /// Factor the flow was estimated at.
    pub align_scale: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub aif: Image,
    pub intermediates: Intermediates,
    pub timings: Vec<StageTiming>,
}

/// Effective downscale: `scale`, reduced until the short side keeps at
/// least [`MIN_ALIGN_SIDE`] pixels, and never below 1.
pub fn alignment_scale(width: usize, height: usize, scale: usize) -> usize {
    let short = width.min(height);
    scale.min(short / MIN_ALIGN_SIDE).max(1)
}

fn shrink(img: &Image, s: usize) -> Result<Image> {
    if s == 1 {
        return Ok(img.clone());
    }
    resize_area(img, (img.width() / s).max(1), (img.height() / s).max(1))
}

/// Flow from `a` into `b` estimated at `1/s`, returned at full resolution.
fn flow_at_scale(a: &Image, b: &Image, s: usize, cfg: &PipelineConfig, side: DefocusSide) -> Result<FlowField> {
    let (w, h) = a.dims();
    let f = estimate_flow_defocus(&shrink(a, s)?, &shrink(b, s)?, &cfg.flow(), &cfg.defocus(), side)?;
    f.resize(w, h)
}

/// `a` where `mask ≥ 0.5`, `b` elsewhere.
fn select(mask: &Image, a: &Image, b: &Image) -> Image {
    let (w, h) = a.dims();
    Image::from_fn(w, h, a.channels(), |x, y, c| {
        if mask.get(x, y, 0) >= 0.5 { a.get(x, y, c) } else { b.get(x, y, c) }
    })
}

/// Homography taking ultra-wide pixels into the main frame.
pub fn register(main: &Image, wide: &Image, cfg: &PipelineConfig) -> Result<(Homography, usize)> {
    let det = cfg.detector();
    let fm = detect_and_describe(main, &det)?;
    let fw = detect_and_describe(wide, &det)?;
    if fm.len() < 4 || fw.len() < 4 {
        return Err(Error::EstimationFailed(format!(
            "too few keypoints for registration (main {}, ultra-wide {})",
            fm.len(),
            fw.len()
        )));
    }
    let dw: Vec<_> = fw.iter().map(|f| f.descriptor.clone()).collect();
    let dm: Vec<_> = fm.iter().map(|f| f.descriptor.clone()).collect();
    let matches = match_descriptors(&dw, &dm, cfg.reg_ratio as f32);
    let pairs: Vec<Correspondence> = matches
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (&fw[i].keypoint, &fm[j].keypoint);
            Correspondence::new([a.x as f64, a.y as f64], [b.x as f64, b.y as f64])
        })
        .collect();
    log::debug!("registration: {} / {} features, {} matches", fw.len(), fm.len(), pairs.len());
    let fit = estimate_homography_ransac(&pairs, &cfg.ransac())?;
    let inliers = fit.inlier_count();
    if inliers < MIN_INLIERS {
        return Err(Error::EstimationFailed(format!("only {inliers} RANSAC inliers")));
    }
    Ok((fit.homography, inliers))
}

/// Runs registration, flow, color alignment and occlusion-aware fusion.
///
/// Both inputs are promoted to RGB. The result lives on the main image grid.
pub fn run(main: &Image, wide: &Image, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let main = main.to_rgb();
    let wide = wide.to_rgb();
    let (w, h) = main.dims();
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &'static str, timings: &mut Vec<StageTiming>| {
        let now = Instant::now();
        timings.push(StageTiming { stage, seconds: (now - clock).as_secs_f64() });
        clock = now;
    };

    let (homography, inliers) = register(&main, &wide, cfg)?;
    let (warped_h, validity_h) = warp_homography(&wide, &homography, w, h)?;
    lap("registration", &mut timings);

    let s = alignment_scale(w, h, cfg.scale);
    // holes outside the ultra-wide view would read as strong edges
    let filled = select(&validity_h, &warped_h, &main);
    // the ultra-wide view is sharp everywhere; only the main image is defocused
    let flow_bwd = flow_at_scale(&main, &filled, s, cfg, DefocusSide::Dst)?;
    let flow_fwd = flow_at_scale(&filled, &main, s, cfg, DefocusSide::Src)?;
    // one resampling of the ultra-wide image through both warps
    let hinv = homography.inverse()?;
    let (warped_flow, validity) = warp_bilinear(&wide, w, h, |x, y| {
        let (u, v) = flow_bwd.get(x as usize, y as usize);
        hinv.apply(x + u as f64, y + v as f64).unwrap_or((f64::NAN, f64::NAN))
    });
    let conf = consistency_map(&flow_fwd, &flow_bwd, cfg.flow_tau as f32)?;
    lap("flow", &mut timings);

    let fit_mask = ConfidenceMap::from_image(&Image::from_fn(w, h, 1, |x, y, _| {
        conf.as_image().get(x, y, 0) * validity.get(x, y, 0)
    }))?;
    let warped_filled = select(&validity, &warped_flow, &main);
    let aligned = color_align_detailed(&warped_filled, &main, &fit_mask, &cfg.color())?;
    lap("color", &mut timings);

    let f_main = focus_measure(&main, FOCUS_RADIUS)?;
    let f_wide = focus_measure(&aligned.image, FOCUS_RADIUS)?;
    let masks = compute_fusion_masks(&f_main, &f_wide, &conf, &validity, &main, &cfg.masks())?;
    // the refill source gets the same color correction as the flow-warped image
    let wide_rc = apply_color_transform(&aligned.transform, &warped_h, ColorDomain::Image)?;
    let refined = refine_occluded_with(&main, &wide_rc, Some(&validity_h), &masks, &cfg.refine())?.image;
    let aif = fuse_aif(&main, &refined, &aligned.image, &masks)?.clamp(0.0, 1.0);
    lap("fusion", &mut timings);

    Ok(PipelineOutput {
        aif,
        intermediates: Intermediates {
            homography,
            inliers,
            warped_h,
            validity_h,
            flow_bwd,
            flow_fwd,
            warped_flow,
            validity,
            conf,
            color_transform: aligned.transform,
            color_aligned: aligned.image,
            masks,
            refined,
            align_scale: s,
        },
        timings,
    })
}

/// Names of the intermediate images written by [`save_outputs`].
pub const INTERMEDIATE_FILES: [&str; 8] = [
    "warped_h.png",
    "warped_flow.png",
    "conf.png",
    "color_aligned.png",
    "refined.png",
    "masks/m_main.png",
    "masks/m_refined.png",
    "masks/m_wide.png",
];

/// Writes `aif.png` and, if asked, the intermediates. Every file is written
/// atomically.
pub fn save_outputs(out: &PipelineOutput, dir: &Path, depth: BitDepth, intermediates: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    if intermediates {
        let i = &out.intermediates;
        let clamp = |img: &Image| img.clamp(0.0, 1.0);
        save_png(&clamp(&i.warped_h), dir.join("warped_h.png"), depth)?;
        save_png(&clamp(&i.warped_flow), dir.join("warped_flow.png"), depth)?;
        save_png(i.conf.as_image(), dir.join("conf.png"), BitDepth::Eight)?;
        save_png(&clamp(&i.color_aligned), dir.join("color_aligned.png"), depth)?;
        save_png(&clamp(&i.refined), dir.join("refined.png"), depth)?;
        i.masks.save(&dir.join("masks"))?;
    }
    save_png(&out.aif, dir.join("aif.png"), depth)
}

/// Ground truth from a focus pair: `bg` is flow-aligned onto `fg` to undo
/// focus breathing, then the pair is fused. Returns `(gt, m_fuse)`.
pub fn synth_ground_truth(fg: &Image, bg: &Image, cfg: &PipelineConfig) -> Result<(Image, Image)> {
    cfg.validate()?;
    if fg.dims() != bg.dims() {
        return Err(Error::InvalidArgument(format!(
            "focus pair differs in size: {:?} vs {:?}",
            fg.dims(),
            bg.dims()
        )));
    }
    let fg = fg.to_rgb();
    let bg = bg.to_rgb();
    let (w, h) = fg.dims();
    let s = alignment_scale(w, h, cfg.scale);
    let flow = flow_at_scale(&fg, &bg, s, cfg, DefocusSide::Both)?;
    let (aligned, valid) = warp_by_flow(&bg, &flow);
    let aligned = select(&valid, &aligned, &fg);
    fuse_multifocus(&fg, &aligned)
}
