//! Dataset layout, validation and PSNR/SSIM evaluation.
//!
//! ```text
//! root/
//!   train.txt, eval.txt          scene ids, one per line
//!   scenes/<id>/main_fg.png      main camera, focused on the foreground
//!              /main_bg.png      main camera, focused on the background
//!              /ultrawide.png
//!              /m_fuse.png       optional, written by ground-truth synthesis
//!              /gt.png           optional, all-in-focus ground truth
//! ```
//!
//! Predictions for evaluation live in a flat directory as `<id>_fg.png`
//! and/or `<id>_bg.png`.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::io::{load_png, write_atomic};
use crate::metrics::{psnr, ssim, ssim_luma};

pub const MAIN_FG: &str = "main_fg.png";
pub const MAIN_BG: &str = "main_bg.png";
pub const ULTRAWIDE: &str = "ultrawide.png";
pub const M_FUSE: &str = "m_fuse.png";
pub const GT: &str = "gt.png";

/// Capture resolutions of the reference dataset.
pub const MAIN_RESOLUTION: (usize, usize) = (3648, 2736);
pub const ULTRAWIDE_RESOLUTION: (usize, usize) = (3840, 2592);
/// Split sizes of the reference dataset, reported but not enforced.
pub const REFERENCE_TRAIN_SCENES: usize = 5000;
pub const REFERENCE_EVAL_SCENES: usize = 372;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// Files of one scene directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneRecord {
    pub id: String,
    pub dir: PathBuf,
    pub main_fg: PathBuf,
    pub main_bg: PathBuf,
    pub ultrawide: PathBuf,
    pub m_fuse: Option<PathBuf>,
    pub gt: Option<PathBuf>,
}

impl SceneRecord {
    /// Collects the paths of `dir`; optional files are recorded only if present.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("scene directory {} has no usable name", dir.display())))?
            .to_string();
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
        Ok(Self {
            id,
            dir: dir.to_path_buf(),
            main_fg: dir.join(MAIN_FG),
            main_bg: dir.join(MAIN_BG),
            ultrawide: dir.join(ULTRAWIDE),
            m_fuse: opt(M_FUSE),
            gt: opt(GT),
        })
    }

    /// Problems with this scene; empty when everything required is present.
    ///
    /// With `check_resolution`, images must have the capture resolutions of
    /// the reference dataset.
    pub fn issues(&self, check_resolution: bool) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |path: &Path, want: (usize, usize), required: bool| {
            if !path.is_file() {
                if required {
                    out.push(format!("{}: missing {}", self.id, file_name(path)));
                }
                return;
            }
            if check_resolution {
                match image::image_dimensions(path) {
                    Ok((w, h)) if (w as usize, h as usize) != want => out.push(format!(
                        "{}: {} is {w}x{h}, expected {}x{}",
                        self.id,
                        file_name(path),
                        want.0,
                        want.1
                    )),
                    Ok(_) => {}
                    Err(e) => out.push(format!("{}: {} unreadable: {e}", self.id, file_name(path))),
                }
            }
        };
        check(&self.main_fg, MAIN_RESOLUTION, true);
        check(&self.main_bg, MAIN_RESOLUTION, true);
        check(&self.ultrawide, ULTRAWIDE_RESOLUTION, true);
        if let Some(p) = &self.m_fuse {
            check(p, MAIN_RESOLUTION, false);
        }
        if let Some(p) = &self.gt {
            check(p, MAIN_RESOLUTION, false);
        }
        out
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Root of a dataset on disk.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn scenes_dir(&self) -> PathBuf {
        self.root.join("scenes")
    }

    pub fn scene_dir(&self, id: &str) -> PathBuf {
        self.scenes_dir().join(id)
    }

    /// Scene ids found under `scenes/`, sorted.
    pub fn scene_ids(&self) -> Result<Vec<String>> {
        let dir = self.scenes_dir();
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let entry = entry.map_err(|e| io_err(&dir, e))?;
            if entry.path().is_dir() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Ids listed in `root/<name>.txt`, or `None` if the file is absent.
    pub fn split(&self, name: &str) -> Result<Option<Vec<String>>> {
        let path = self.root.join(format!("{name}.txt"));
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        Ok(Some(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        ))
    }

    /// Scenes to evaluate: `eval.txt` if present, otherwise every scene.
    pub fn eval_ids(&self) -> Result<Vec<String>> {
        let mut ids = match self.split("eval")? {
            Some(ids) => ids,
            None => self.scene_ids()?,
        };
        ids.sort();
        ids.dedup();
        Ok(ids)
    }

    pub fn scene(&self, id: &str) -> Result<SceneRecord> {
        SceneRecord::from_dir(&self.scene_dir(id))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub scenes: usize,
    pub train: Option<usize>,
    pub eval: Option<usize>,
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks that every scene has its required files and that split files
/// only name existing scenes. Split sizes are reported, not enforced.
pub fn validate_dataset(root: &Path, check_resolution: bool) -> Result<ValidationReport> {
    let layout = DatasetLayout::new(root);
    let ids = layout.scene_ids()?;
    let mut report = ValidationReport { scenes: ids.len(), ..Default::default() };
    if ids.is_empty() {
        report.issues.push("no scenes found".to_string());
    }
    let per_scene: Vec<Vec<String>> = ids
        .par_iter()
        .map(|id| match layout.scene(id) {
            Ok(s) => s.issues(check_resolution),
            Err(e) => vec![e.to_string()],
        })
        .collect();
    report.issues.extend(per_scene.into_iter().flatten());
    for (name, slot) in [("train", &mut report.train), ("eval", &mut report.eval)] {
        if let Some(list) = layout.split(name)? {
            *slot = Some(list.len());
            for id in list.iter().filter(|id| ids.binary_search(id).is_err()) {
                report.issues.push(format!("{name}.txt lists unknown scene {id}"));
            }
        }
    }
    Ok(report)
}

/// Which main capture the prediction was synthesized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FocusSide {
    Foreground,
    Background,
}

impl FocusSide {
    pub const ALL: [FocusSide; 2] = [FocusSide::Foreground, FocusSide::Background];

    /// File-name suffix of predictions for this side.
    pub fn suffix(self) -> &'static str {
        match self {
            FocusSide::Foreground => "fg",
            FocusSide::Background => "bg",
        }
    }
}

impl fmt::Display for FocusSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FocusSide::Foreground => "foreground",
            FocusSide::Background => "background",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    pub scene_id: String,
    pub focus_side: FocusSide,
    /// dB; `f64::INFINITY` for a perfect prediction.
    pub psnr: f64,
    pub ssim_rgb: f64,
    pub ssim_luma: f64,
}

/// Means over a group of rows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitMeans {
    pub count: usize,
    pub psnr: f64,
    pub ssim_rgb: f64,
    pub ssim_luma: f64,
}

impl SplitMeans {
    fn of<'a>(rows: impl Iterator<Item = &'a SceneReport>) -> Self {
        let mut m = SplitMeans::default();
        for r in rows {
            m.count += 1;
            m.psnr += r.psnr;
            m.ssim_rgb += r.ssim_rgb;
            m.ssim_luma += r.ssim_luma;
        }
        if m.count > 0 {
            let n = m.count as f64;
            m.psnr /= n;
            m.ssim_rgb /= n;
            m.ssim_luma /= n;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by scene id, foreground before background.
    pub rows: Vec<SceneReport>,
    /// Scenes or predictions that could not be scored.
    pub errors: usize,
    pub foreground: SplitMeans,
    pub background: SplitMeans,
    pub total: SplitMeans,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() { "inf".to_string() } else { format!("{v:.6}") }
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Dataset(format!("csv: {e}"));
        w.write_record(["scene_id", "focus_side", "psnr_db", "ssim_rgb", "ssim_luma"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.scene_id.clone(),
                r.focus_side.to_string(),
                fmt_db(r.psnr),
                format!("{:.6}", r.ssim_rgb),
                format!("{:.6}", r.ssim_luma),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Dataset(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Dataset(e.to_string()))
    }

    /// One line per group, e.g. `total scenes=2 psnr_db=31.2 ...`.
    pub fn summary(&self) -> String {
        let line = |name: &str, m: &SplitMeans| {
            format!(
                "{name} count={} psnr_db={} ssim_rgb={:.6} ssim_luma={:.6}",
                m.count,
                fmt_db(m.psnr),
                m.ssim_rgb,
                m.ssim_luma
            )
        };
        format!(
            "{}\n{}\n{}\nerrors={}",
            line("foreground", &self.foreground),
            line("background", &self.background),
            line("total", &self.total),
            self.errors
        )
    }
}

enum SceneOutcome {
    Rows(Vec<SceneReport>, usize),
    Failed,
}

fn evaluate_scene(layout: &DatasetLayout, pred: &Path, id: &str) -> SceneOutcome {
    let gt_path = layout.scene_dir(id).join(GT);
    let gt = match load_png(&gt_path) {
        Ok((img, _)) => img.to_rgb(),
        Err(e) => {
            log::warn!("scene {id}: ground truth unusable: {e}");
            return SceneOutcome::Failed;
        }
    };
    let mut rows = Vec::new();
    let mut errors = 0;
    for side in FocusSide::ALL {
        let p = pred.join(format!("{id}_{}.png", side.suffix()));
        if !p.is_file() {
            continue;
        }
        let scored = load_png(&p).and_then(|(img, _)| {
            let img = img.to_rgb();
            Ok(SceneReport {
                scene_id: id.to_string(),
                focus_side: side,
                psnr: psnr(&img, &gt)?,
                ssim_rgb: ssim(&img, &gt)?,
                ssim_luma: ssim_luma(&img, &gt)?,
            })
        });
        match scored {
            Ok(r) => rows.push(r),
            Err(e) => {
                log::warn!("scene {id} ({side}): {e}");
                errors += 1;
            }
        }
    }
    if rows.is_empty() && errors == 0 {
        log::warn!("scene {id}: no prediction found");
        return SceneOutcome::Failed;
    }
    SceneOutcome::Rows(rows, errors)
}

/// Scores every prediction under `pred` against the scene ground truths.
///
/// Scenes are taken from `eval.txt` (or all scenes) and processed in
/// parallel; rows come back sorted by scene id. If `out_csv` is given the
/// CSV is written atomically.
pub fn evaluate_dataset(root: &Path, pred: &Path, out_csv: Option<&Path>) -> Result<EvalReport> {
    let layout = DatasetLayout::new(root);
    let ids = layout.eval_ids()?;
    if ids.is_empty() {
        return Err(Error::Dataset(format!("no scenes to evaluate under {}", root.display())));
    }
    if !pred.is_dir() {
        return Err(Error::Dataset(format!("prediction directory {} not found", pred.display())));
    }
    let outcomes: Vec<SceneOutcome> = ids.par_iter().map(|id| evaluate_scene(&layout, pred, id)).collect();
    let mut rows = Vec::new();
    let mut errors = 0;
    for o in outcomes {
        match o {
            SceneOutcome::Rows(r, e) => {
                rows.extend(r);
                errors += e;
            }
            SceneOutcome::Failed => errors += 1,
        }
    }
    rows.sort_by(|a, b| (&a.scene_id, a.focus_side).cmp(&(&b.scene_id, b.focus_side)));
    let report = EvalReport {
        foreground: SplitMeans::of(rows.iter().filter(|r| r.focus_side == FocusSide::Foreground)),
        background: SplitMeans::of(rows.iter().filter(|r| r.focus_side == FocusSide::Background)),
        total: SplitMeans::of(rows.iter()),
        rows,
        errors,
    };
    if let Some(path) = out_csv {
        write_atomic(path, report.to_csv()?.as_bytes())?;
    }
    Ok(report)
}
