//! Pipeline configuration: a line-oriented `key = value` file.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid configuration. Unknown keys and out-of-range values
//! are errors.
//!
//! ```text
//! # registration
//! reg.max_count = 4000
//! flow.tau = 1
//! scale = 4
//! ```

use std::path::Path;

use crate::color::ColorParams;
use crate::error::{Error, Result};
use crate::flow::{DefocusParams, FlowParams};
use crate::fusion::{MaskParams, RefineParams};
use crate::registration::{DetectorParams, RansacParams};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub reg_max_count: usize,
    /// Lowe ratio for descriptor matching.
    pub reg_ratio: f64,
    pub reg_ransac_iters: usize,
    pub reg_inlier_px: f64,
    pub reg_seed: u64,
    pub flow_levels: usize,
    pub flow_window: usize,
    pub flow_iters: usize,
    /// Forward–backward consistency threshold in pixels.
    pub flow_tau: f64,
    /// Number of candidate blurs for defocus-matched flow; 1 disables it.
    pub flow_defocus_levels: usize,
    /// Sigma spacing of the candidate blurs, pixels at alignment scale.
    pub flow_defocus_step: f64,
    pub color_grid: usize,
    pub color_ridge: f64,
    pub color_fit_sigma: f64,
    pub fusion_margin: f64,
    pub fusion_patch: usize,
    pub fusion_search: usize,
    pub fusion_guided_radius: usize,
    pub fusion_guided_eps: f64,
    /// Alignment runs at `1/scale` of the input resolution.
    pub scale: usize,
    /// Loss weights of the learned formulation. Parsed and range-checked
    /// for completeness; nothing in the classical pipeline reads them.
    pub loss_lambda: f64,
    pub loss_delta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reg_max_count: 4000,
            reg_ratio: 0.8,
            reg_ransac_iters: 2000,
            reg_inlier_px: 3.0,
            reg_seed: 0,
            flow_levels: 5,
            flow_window: 21,
            flow_iters: 30,
            flow_tau: 1.0,
            flow_defocus_levels: 6,
            flow_defocus_step: 0.75,
            color_grid: 8,
            color_ridge: 1e-3,
            color_fit_sigma: 4.0,
            fusion_margin: 0.15,
            fusion_patch: 7,
            fusion_search: 16,
            fusion_guided_radius: 8,
            fusion_guided_eps: 1e-3,
            scale: 4,
            loss_lambda: 0.5,
            loss_delta: 0.1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse `{raw}` for {key}")))
}

fn check<T: PartialOrd + std::fmt::Display + Copy>(key: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} = {v} is outside [{lo}, {hi}]")))
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw_line) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected key = value")))?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "reg.max_count" => c.reg_max_count = parse_num(key, v, n)?,
                "reg.ratio" => c.reg_ratio = parse_num(key, v, n)?,
                "reg.ransac_iters" => c.reg_ransac_iters = parse_num(key, v, n)?,
                "reg.inlier_px" => c.reg_inlier_px = parse_num(key, v, n)?,
                "reg.seed" => c.reg_seed = parse_num(key, v, n)?,
                "flow.levels" => c.flow_levels = parse_num(key, v, n)?,
                "flow.window" => c.flow_window = parse_num(key, v, n)?,
                "flow.iters" => c.flow_iters = parse_num(key, v, n)?,
                "flow.tau" => c.flow_tau = parse_num(key, v, n)?,
                "flow.defocus_levels" => c.flow_defocus_levels = parse_num(key, v, n)?,
                "flow.defocus_step" => c.flow_defocus_step = parse_num(key, v, n)?,
                "color.grid" => c.color_grid = parse_num(key, v, n)?,
                "color.ridge" => c.color_ridge = parse_num(key, v, n)?,
                "color.fit_sigma" => c.color_fit_sigma = parse_num(key, v, n)?,
                "fusion.margin" => c.fusion_margin = parse_num(key, v, n)?,
                "fusion.patch" => c.fusion_patch = parse_num(key, v, n)?,
                "fusion.search" => c.fusion_search = parse_num(key, v, n)?,
                "fusion.guided_radius" => c.fusion_guided_radius = parse_num(key, v, n)?,
                "fusion.guided_eps" => c.fusion_guided_eps = parse_num(key, v, n)?,
                "scale" => c.scale = parse_num(key, v, n)?,
                "loss.lambda" => c.loss_lambda = parse_num(key, v, n)?,
                "loss.delta" => c.loss_delta = parse_num(key, v, n)?,
                other => return Err(Error::Config(format!("line {n}: unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        check("reg.max_count", self.reg_max_count, 8, 100_000)?;
        check("reg.ratio", self.reg_ratio, 0.1, 1.0)?;
        check("reg.ransac_iters", self.reg_ransac_iters, 1, 1_000_000)?;
        check("reg.inlier_px", self.reg_inlier_px, 0.01, 100.0)?;
        check("flow.levels", self.flow_levels, 1, 10)?;
        check("flow.window", self.flow_window, 3, 101)?;
        check("flow.iters", self.flow_iters, 1, 1000)?;
        check("flow.tau", self.flow_tau, 1e-3, 100.0)?;
        check("flow.defocus_levels", self.flow_defocus_levels, 1, 32)?;
        check("flow.defocus_step", self.flow_defocus_step, 0.0, 10.0)?;
        check("color.grid", self.color_grid, 1, 64)?;
        check("color.ridge", self.color_ridge, 0.0, 1e3)?;
        check("color.fit_sigma", self.color_fit_sigma, 0.0, 64.0)?;
        check("fusion.margin", self.fusion_margin, 0.0, 10.0)?;
        check("fusion.patch", self.fusion_patch, 3, 63)?;
        check("fusion.search", self.fusion_search, 1, 128)?;
        check("fusion.guided_radius", self.fusion_guided_radius, 1, 64)?;
        check("fusion.guided_eps", self.fusion_guided_eps, 1e-9, 1.0)?;
        check("scale", self.scale, 1, 16)?;
        check("loss.lambda", self.loss_lambda, 0.0, 100.0)?;
        check("loss.delta", self.loss_delta, 0.0, 100.0)?;
        Ok(())
    }

    /// Canonical text form; [`PipelineConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        format!(
            "reg.max_count = {}\nreg.ratio = {}\nreg.ransac_iters = {}\nreg.inlier_px = {}\nreg.seed = {}\n\
             flow.levels = {}\nflow.window = {}\nflow.iters = {}\nflow.tau = {}\n\
             flow.defocus_levels = {}\nflow.defocus_step = {}\n\
             color.grid = {}\ncolor.ridge = {}\ncolor.fit_sigma = {}\n\
             fusion.margin = {}\nfusion.patch = {}\nfusion.search = {}\nfusion.guided_radius = {}\nfusion.guided_eps = {}\n\
             scale = {}\nloss.lambda = {}\nloss.delta = {}\n",
            self.reg_max_count,
            self.reg_ratio,
            self.reg_ransac_iters,
            self.reg_inlier_px,
            self.reg_seed,
            self.flow_levels,
            self.flow_window,
            self.flow_iters,
            self.flow_tau,
            self.flow_defocus_levels,
            self.flow_defocus_step,
            self.color_grid,
            self.color_ridge,
            self.color_fit_sigma,
            self.fusion_margin,
            self.fusion_patch,
            self.fusion_search,
            self.fusion_guided_radius,
            self.fusion_guided_eps,
            self.scale,
            self.loss_lambda,
            self.loss_delta,
        )
    }

    pub fn detector(&self) -> DetectorParams {
        DetectorParams { max_count: self.reg_max_count, ..DetectorParams::default() }
    }

    pub fn ransac(&self) -> RansacParams {
        RansacParams { iters: self.reg_ransac_iters, inlier_px: self.reg_inlier_px, seed: self.reg_seed }
    }

    pub fn flow(&self) -> FlowParams {
        FlowParams {
            levels: self.flow_levels,
            window: self.flow_window,
            iters: self.flow_iters,
            ..FlowParams::default()
        }
    }

    pub fn defocus(&self) -> DefocusParams {
        DefocusParams::ladder(self.flow_defocus_levels, self.flow_defocus_step)
    }

    pub fn color(&self) -> ColorParams {
        ColorParams { grid: self.color_grid, ridge: self.color_ridge, fit_sigma: self.color_fit_sigma }
    }

    pub fn masks(&self) -> MaskParams {
        MaskParams {
            margin: self.fusion_margin,
            guided_radius: self.fusion_guided_radius,
            guided_eps: self.fusion_guided_eps,
        }
    }

    pub fn refine(&self) -> RefineParams {
        RefineParams { patch: self.fusion_patch, search: self.fusion_search, ..RefineParams::default() }
    }
}
