use super::{focus_measure, FusionMaskTriple, MASK_SUM_TOLERANCE};
use crate::error::{invalid, Result};
use crate::imaging::{guided_filter, Image};

/// `refined·m_refined + main·m_main + wide_c·m_wide`, per pixel and channel.
pub fn fuse_aif(main: &Image, refined: &Image, wide_c: &Image, masks: &FusionMaskTriple) -> Result<Image> {
    let d = main.dims();
    if refined.dims() != d || wide_c.dims() != d || masks.dims() != d {
        return Err(invalid("fusion inputs differ in size"));
    }
    if refined.channels() != main.channels() || wide_c.channels() != main.channels() {
        return Err(invalid("fusion inputs differ in channel count"));
    }
    masks.validate(MASK_SUM_TOLERANCE)?;
    let (w, h) = d;
    let mut out = main.clone();
    for c in 0..main.channels() {
        let (pm, pr, pw) = (main.plane(c), refined.plane(c), wide_c.plane(c));
        for (i, o) in out.plane_mut(c).iter_mut().enumerate().take(w * h) {
            let v = masks.m_refined.data()[i] as f64 * pr[i] as f64
                + masks.m_main.data()[i] as f64 * pm[i] as f64
                + masks.m_wide.data()[i] as f64 * pw[i] as f64;
            *o = v as f32;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultifocusParams {
    pub focus_radius: usize,
    pub guided_radius: usize,
    pub guided_eps: f64,
}

impl Default for MultifocusParams {
    fn default() -> Self {
        Self { focus_radius: 4, guided_radius: 8, guided_eps: 1e-3 }
    }
}

/// Ground-truth fusion of a focus pair: returns `(I_gt, M_fuse)` with
/// `I_gt = M_fuse·fg + (1 − M_fuse)·bg` and `M_fuse` binary.
pub fn fuse_multifocus(fg: &Image, bg: &Image) -> Result<(Image, Image)> {
    fuse_multifocus_with(fg, bg, &MultifocusParams::default())
}

pub fn fuse_multifocus_with(fg: &Image, bg: &Image, params: &MultifocusParams) -> Result<(Image, Image)> {
    if fg.dims() != bg.dims() || fg.channels() != bg.channels() {
        return Err(invalid("focus pair differs in shape"));
    }
    let ff = focus_measure(fg, params.focus_radius)?;
    let fb = focus_measure(bg, params.focus_radius)?;
    let (w, h) = fg.dims();
    let hard = Image::from_fn(w, h, 1, |x, y, _| if ff.get(x, y) >= fb.get(x, y) { 1.0 } else { 0.0 });
    let (gf, gb) = (fg.to_gray(), bg.to_gray());
    let guide = Image::from_fn(w, h, 1, |x, y, _| 0.5 * (gf.get(x, y, 0) + gb.get(x, y, 0)));
    let smooth = guided_filter(&hard, &guide, params.guided_radius, params.guided_eps)?;
    let m = smooth.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let gt = blend_binary(fg, bg, &m);
    Ok((gt, m))
}

/// `m·a + (1 − m)·b` for a binary `m`, exact per sample.
fn blend_binary(a: &Image, b: &Image, m: &Image) -> Image {
    let (w, h) = a.dims();
    Image::from_fn(w, h, a.channels(), |x, y, c| {
        let t = m.get(x, y, 0);
        t * a.get(x, y, c) + (1.0 - t) * b.get(x, y, c)
    })
}
