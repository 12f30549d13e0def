//! Python bindings: images, the individual stages and the full pipeline.
//!
//! Image samples cross the boundary as planar little-endian `f32` bytes, so
//! `numpy.frombuffer(img.to_bytes(), "<f4").reshape(c, h, w)` views them.

use std::path::PathBuf;

use aifpipe_core::color::{color_align, ColorParams};
use aifpipe_core::config::PipelineConfig;
use aifpipe_core::dataset::evaluate_dataset;
use aifpipe_core::flow::{consistency_map, estimate_flow, ConfidenceMap, FlowField, FlowParams};
use aifpipe_core::fusion::fuse_multifocus;
use aifpipe_core::imaging::io::{load_png as core_load_png, save_png as core_save_png, BitDepth};
use aifpipe_core::imaging::{dwt2 as core_dwt2, idwt2 as core_idwt2, WaveletBands};
use aifpipe_core::registration::{estimate_homography_ransac, Correspondence, RansacParams};
use aifpipe_core::{metrics, pipeline, synth, Error, Image};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

create_exception!(aifpipe, EstimationError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::EstimationFailed(m) => EstimationError::new_err(m),
        Error::InvalidArgument(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Codec { .. } => PyOSError::new_err(e.to_string()),
        Error::Dataset(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn depth_from_bits(bits: u8) -> PyResult<BitDepth> {
    match bits {
        8 => Ok(BitDepth::Eight),
        16 => Ok(BitDepth::Sixteen),
        _ => Err(PyValueError::new_err("bit depth must be 8 or 16")),
    }
}

/// Planar `f32` image with 1 or 3 channels.
#[pyclass(name = "Image", module = "aifpipe", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: Image,
}

#[pymethods]
impl PyImage {
    #[new]
    #[pyo3(signature = (width, height, channels, data=None))]
    fn new(width: usize, height: usize, channels: usize, data: Option<Vec<f32>>) -> PyResult<Self> {
        let data = data.unwrap_or_else(|| vec![0.0; width * height * channels]);
        Ok(Self { inner: Image::from_vec(width, height, channels, data).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_bytes(width: usize, height: usize, channels: usize, data: &[u8]) -> PyResult<Self> {
        if data.len() != width * height * channels * 4 {
            return Err(PyValueError::new_err(format!(
                "expected {} bytes, got {}",
                width * height * channels * 4,
                data.len()
            )));
        }
        let samples = data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Self { inner: Image::from_vec(width, height, channels, samples).map_err(to_py)? })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        let bytes: Vec<u8> = self.inner.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        PyBytes::new(py, &bytes)
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f32> {
        if x >= self.inner.width() || y >= self.inner.height() || c >= self.inner.channels() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.inner.get(x, y, c))
    }

    fn to_gray(&self) -> Self {
        Self { inner: self.inner.to_gray() }
    }

    fn mean_abs_diff(&self, other: &PyImage) -> f64 {
        self.inner.mean_abs_diff(&other.inner)
    }

    fn __eq__(&self, other: &PyImage) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

impl From<Image> for PyImage {
    fn from(inner: Image) -> Self {
        Self { inner }
    }
}

/// Dense displacement field; `a(p) ≈ b(p + flow(p))`.
#[pyclass(name = "Flow", module = "aifpipe", from_py_object)]
#[derive(Clone)]
struct PyFlow {
    inner: FlowField,
}

#[pymethods]
impl PyFlow {
    #[staticmethod]
    fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self { inner: FlowField::constant(width, height, u, v) }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<(f32, f32)> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.inner.get(x, y))
    }

    fn __repr__(&self) -> String {
        format!("Flow({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Pipeline settings; parses the same `key = value` text as the CLI.
#[pyclass(name = "Config", module = "aifpipe", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text=""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { inner: PipelineConfig::parse(text).map_err(to_py)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.reg_seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.reg_seed = seed;
    }

    #[getter]
    fn scale(&self) -> usize {
        self.inner.scale
    }
}

fn config_or_default(config: Option<&PyConfig>) -> PipelineConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

#[pyfunction]
fn load_png(path: PathBuf) -> PyResult<(PyImage, u8)> {
    let (img, depth) = core_load_png(&path).map_err(to_py)?;
    Ok((img.into(), if depth == BitDepth::Sixteen { 16 } else { 8 }))
}

#[pyfunction]
#[pyo3(signature = (img, path, bit_depth=8))]
fn save_png(img: &PyImage, path: PathBuf, bit_depth: u8) -> PyResult<()> {
    core_save_png(&img.inner, &path, depth_from_bits(bit_depth)?).map_err(to_py)
}

/// Haar analysis: returns `(ll, lh, hl, hh)`.
#[pyfunction]
fn dwt2(img: &PyImage) -> PyResult<(PyImage, PyImage, PyImage, PyImage)> {
    let b = core_dwt2(&img.inner).map_err(to_py)?;
    Ok((b.ll.into(), b.lh.into(), b.hl.into(), b.hh.into()))
}

/// Haar synthesis back to `width × height`.
#[pyfunction]
fn idwt2(
    ll: &PyImage,
    lh: &PyImage,
    hl: &PyImage,
    hh: &PyImage,
    width: usize,
    height: usize,
) -> PyResult<PyImage> {
    let bands = WaveletBands {
        ll: ll.inner.clone(),
        lh: lh.inner.clone(),
        hl: hl.inner.clone(),
        hh: hh.inner.clone(),
        parity: (width, height),
    };
    Ok(core_idwt2(&bands).map_err(to_py)?.into())
}

/// RANSAC homography from point lists. Returns `(rows, inlier_flags)`.
#[pyfunction]
#[pyo3(signature = (src, dst, inlier_px=3.0, iters=2000, seed=0))]
fn estimate_homography(
    src: Vec<(f64, f64)>,
    dst: Vec<(f64, f64)>,
    inlier_px: f64,
    iters: usize,
    seed: u64,
) -> PyResult<([[f64; 3]; 3], Vec<bool>)> {
    if src.len() != dst.len() {
        return Err(PyValueError::new_err("src and dst differ in length"));
    }
    let pairs: Vec<Correspondence> =
        src.iter().zip(&dst).map(|(s, d)| Correspondence::new([s.0, s.1], [d.0, d.1])).collect();
    let r = estimate_homography_ransac(&pairs, &RansacParams { iters, inlier_px, seed }).map_err(to_py)?;
    Ok((r.homography.rows(), r.inliers))
}

#[pyfunction]
fn flow(py: Python<'_>, src: &PyImage, dst: &PyImage) -> PyResult<PyFlow> {
    let (a, b) = (&src.inner, &dst.inner);
    let f = py.detach(|| estimate_flow(a, b, &FlowParams::default())).map_err(to_py)?;
    Ok(PyFlow { inner: f })
}

/// Forward–backward confidence (1 = consistent) on `bwd`'s grid.
#[pyfunction]
#[pyo3(signature = (fwd, bwd, tau=1.0))]
fn consistency(fwd: &PyFlow, bwd: &PyFlow, tau: f32) -> PyResult<PyImage> {
    Ok(consistency_map(&fwd.inner, &bwd.inner, tau).map_err(to_py)?.into_image().into())
}

#[pyfunction]
fn align_color(warped: &PyImage, main: &PyImage, confidence: &PyImage) -> PyResult<PyImage> {
    let conf = ConfidenceMap::from_image(&confidence.inner).map_err(to_py)?;
    Ok(color_align(&warped.inner, &main.inner, &conf, &ColorParams::default()).map_err(to_py)?.into())
}

/// Ground-truth fusion of a focus pair: `(gt, mask)`.
#[pyfunction]
fn multifocus(fg: &PyImage, bg: &PyImage) -> PyResult<(PyImage, PyImage)> {
    let (gt, m) = fuse_multifocus(&fg.inner, &bg.inner).map_err(to_py)?;
    Ok((gt.into(), m.into()))
}

#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).map_err(to_py)
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).map_err(to_py)
}

#[pyfunction]
fn ssim_luma(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim_luma(&a.inner, &b.inner).map_err(to_py)
}

/// Full pipeline. Returns `(aif, info)` where `info` holds stage timings,
/// the homography and the inlier count. With `out_dir`, writes `aif.png`
/// (and the intermediates if asked) like the CLI.
#[pyfunction]
#[pyo3(signature = (main, wide, config=None, out_dir=None, save_intermediates=false, bit_depth=8))]
fn fuse<'py>(
    py: Python<'py>,
    main: &PyImage,
    wide: &PyImage,
    config: Option<&PyConfig>,
    out_dir: Option<PathBuf>,
    save_intermediates: bool,
    bit_depth: u8,
) -> PyResult<(PyImage, Bound<'py, PyDict>)> {
    let cfg = config_or_default(config);
    let depth = depth_from_bits(bit_depth)?;
    let (m, w) = (&main.inner, &wide.inner);
    let out = py.detach(|| pipeline::run(m, w, &cfg)).map_err(to_py)?;
    if let Some(dir) = out_dir {
        pipeline::save_outputs(&out, &dir, depth, save_intermediates).map_err(to_py)?;
    }
    let info = PyDict::new(py);
    let timings = PyDict::new(py);
    for t in &out.timings {
        timings.set_item(t.stage, t.seconds)?;
    }
    timings.set_item("total", out.timings.iter().map(|t| t.seconds).sum::<f64>())?;
    info.set_item("timings", timings)?;
    info.set_item("homography", out.intermediates.homography.rows())?;
    info.set_item("inliers", out.intermediates.inliers)?;
    info.set_item("align_scale", out.intermediates.align_scale)?;
    Ok((out.aif.into(), info))
}

/// Ground truth from a focus pair after focus-breathing alignment.
#[pyfunction]
#[pyo3(signature = (fg, bg, config=None))]
fn synth_ground_truth(py: Python<'_>, fg: &PyImage, bg: &PyImage, config: Option<&PyConfig>) -> PyResult<(PyImage, PyImage)> {
    let cfg = config_or_default(config);
    let (a, b) = (&fg.inner, &bg.inner);
    let (gt, m) = py.detach(|| pipeline::synth_ground_truth(a, b, &cfg)).map_err(to_py)?;
    Ok((gt.into(), m.into()))
}

/// Scores a prediction directory; returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (root, pred, out_csv=None))]
fn evaluate<'py>(py: Python<'py>, root: PathBuf, pred: PathBuf, out_csv: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let report = py.detach(|| evaluate_dataset(&root, &pred, out_csv.as_deref())).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("rows", report.rows.len())?;
    d.set_item("errors", report.errors)?;
    for (name, m) in [("foreground", &report.foreground), ("background", &report.background), ("total", &report.total)] {
        let g = PyDict::new(py);
        g.set_item("count", m.count)?;
        g.set_item("psnr_db", m.psnr)?;
        g.set_item("ssim_rgb", m.ssim_rgb)?;
        g.set_item("ssim_luma", m.ssim_luma)?;
        d.set_item(name, g)?;
    }
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (width, height, channels=3, seed=0))]
fn texture(width: usize, height: usize, channels: usize, seed: u64) -> PyImage {
    synth::texture(width, height, channels, seed).into()
}

/// Synthetic capture `(gt, main, wide)` with known all-in-focus truth.
#[pyfunction]
#[pyo3(signature = (width=384, height=288, seed=1))]
fn aif_scene(width: usize, height: usize, seed: u64) -> (PyImage, PyImage, PyImage) {
    let s = synth::aif_scene(&synth::AifSceneParams { width, height, seed, ..Default::default() });
    (s.gt.into(), s.main.into(), s.wide.into())
}

#[pymodule]
fn aifpipe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyFlow>()?;
    m.add_class::<PyConfig>()?;
    m.add("EstimationError", m.py().get_type::<EstimationError>())?;
    m.add_function(wrap_pyfunction!(load_png, m)?)?;
    m.add_function(wrap_pyfunction!(save_png, m)?)?;
    m.add_function(wrap_pyfunction!(dwt2, m)?)?;
    m.add_function(wrap_pyfunction!(idwt2, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_homography, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(consistency, m)?)?;
    m.add_function(wrap_pyfunction!(align_color, m)?)?;
    m.add_function(wrap_pyfunction!(multifocus, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(ssim_luma, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(synth_ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(texture, m)?)?;
    m.add_function(wrap_pyfunction!(aif_scene, m)?)?;
    Ok(())
}
