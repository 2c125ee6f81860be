//! Python bindings for the egomocap library.

use std::path::PathBuf;

use egomocap::heatmap::{decode, load_heatmap_stream, DecodeOptions, Heatmap3D};
use egomocap::metrics;
use egomocap::prior::{self, RefineOptions};
use egomocap::synth::{self, MotionSpec};
use nalgebra::{Vector2, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(egomocap_py, EgomocapError, PyException);

fn err(e: egomocap::Error) -> PyErr {
    EgomocapError::new_err(e.to_string())
}

fn points(v: Vec<[f64; 3]>) -> Vec<Vector3<f64>> {
    v.into_iter().map(Vector3::from).collect()
}

fn arrays(v: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

#[pyclass(name = "FisheyeCamera", module = "egomocap_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCamera {
    inner: egomocap::FisheyeCamera,
}

#[pymethods]
impl PyCamera {
    #[staticmethod]
    #[pyo3(signature = (focal, size, degree = 6))]
    fn equidistant(focal: f64, size: u32, degree: usize) -> PyResult<Self> {
        let inner = egomocap::make_equidistant_camera(focal, size, degree).map_err(err)?;
        Ok(PyCamera { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = egomocap::FisheyeCamera::from_json(text).map_err(err)?;
        Ok(PyCamera { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = egomocap::FisheyeCamera::load(&path).map_err(err)?;
        Ok(PyCamera { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    fn project(&self, point: [f64; 3]) -> PyResult<(f64, f64)> {
        let px = self.inner.project(&Vector3::from(point)).map_err(err)?;
        Ok((px.x, px.y))
    }

    fn unproject(&self, pixel: (f64, f64), distance: f64) -> PyResult<[f64; 3]> {
        let p = self.inner.unproject(&Vector2::new(pixel.0, pixel.1), distance).map_err(err)?;
        Ok([p.x, p.y, p.z])
    }

    #[pyo3(signature = (samples = 1000, tol_px = 0.1))]
    fn validate<'py>(&self, py: Python<'py>, samples: usize, tol_px: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.validate(samples, tol_px);
        let d = PyDict::new(py);
        d.set_item("samples", r.samples)?;
        d.set_item("max_err", r.max_err)?;
        d.set_item("mean_err", r.mean_err)?;
        d.set_item("passed", r.passed)?;
        Ok(d)
    }
}

#[pyclass(name = "MotionSequence", module = "egomocap_py", from_py_object)]
#[derive(Clone)]
pub struct PySequence {
    inner: egomocap::MotionSequence,
}

#[pymethods]
impl PySequence {
    #[new]
    #[pyo3(signature = (frames, fps = 30.0, uncertainty = None))]
    fn new(frames: Vec<Vec<[f64; 3]>>, fps: f64, uncertainty: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let mut inner =
            egomocap::MotionSequence::new(frames.into_iter().map(points).collect(), fps).map_err(err)?;
        if let Some(u) = uncertainty {
            inner = inner.with_uncertainty(u).map_err(err)?;
        }
        Ok(PySequence { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = egomocap::MotionSequence::from_json(text).map_err(err)?;
        Ok(PySequence { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = egomocap::MotionSequence::load(&path).map_err(err)?;
        Ok(PySequence { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn frames(&self) -> Vec<Vec<[f64; 3]>> {
        self.inner.frames.iter().map(|f| arrays(f)).collect()
    }

    #[getter]
    fn uncertainty(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.uncertainty.clone()
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "DenoiserModel", module = "egomocap_py")]
pub struct PyModel {
    inner: prior::DenoiserModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = prior::DenoiserModel::load(&path).map_err(err)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.config.window
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.params.len()
    }

    /// Uncertainty-guided refinement of an estimate carrying uncertainty.
    #[pyo3(signature = (estimate, seed, t_start = 1000, k = 0.1))]
    fn refine(&self, py: Python<'_>, estimate: &PySequence, seed: u64, t_start: usize, k: f64) -> PyResult<PySequence> {
        let schedule = self.inner.config.schedule().map_err(err)?;
        let opts = RefineOptions {
            k,
            t_start,
            ..RefineOptions::new(seed)
        };
        let model = &self.inner;
        let input = &estimate.inner;
        let inner = py.detach(|| prior::refine(input, model, &schedule, &opts)).map_err(err)?;
        Ok(PySequence { inner })
    }
}

/// Trains a denoiser on raw sequences (windowed and canonicalized here).
#[pyfunction]
#[pyo3(signature = (sequences, seed, layers = 4, width = 256, heads = 4, ffn = 512, epochs = 30, batch_size = 2, learning_rate = 5e-4))]
#[allow(clippy::too_many_arguments)]
fn train_denoiser(
    py: Python<'_>,
    sequences: Vec<PySequence>,
    seed: u64,
    layers: usize,
    width: usize,
    heads: usize,
    ffn: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let config = prior::TrainConfig {
        layers,
        width,
        heads,
        ffn,
        epochs,
        batch_size,
        learning_rate,
        seed,
        ..prior::TrainConfig::default()
    };
    let seqs: Vec<_> = sequences.into_iter().map(|s| s.inner).collect();
    let (model, report) = py
        .detach(|| {
            let window = seqs.first().map(|s| s.len().min(prior::WINDOW)).unwrap_or(prior::WINDOW);
            let data = prior::prepare_dataset(&seqs, window)?;
            prior::train_denoiser(&data, &config, &prior::NoiseSchedule::default_linear(), |_, _| {})
        })
        .map_err(err)?;
    Ok((PyModel { inner: model }, report.epoch_losses))
}

#[pyfunction]
#[pyo3(signature = (t, u, steps = 1000, k = 0.1))]
fn weight(t: f64, u: f64, steps: usize, k: f64) -> f64 {
    prior::weight(t, u, steps, k)
}

#[pyfunction]
fn mpjpe(pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>) -> PyResult<f64> {
    metrics::mpjpe(&points(pred), &points(gt)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, with_scale = true))]
fn pa_mpjpe(pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>, with_scale: bool) -> PyResult<f64> {
    metrics::pa_mpjpe(&points(pred), &points(gt), with_scale).map_err(err)
}

/// BA-MPJPE against the bundled skeleton matching the joint count.
#[pyfunction]
fn ba_mpjpe(pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>) -> PyResult<f64> {
    let reference = match gt.len() {
        n if n == egomocap::skeleton::BODY_JOINTS => egomocap::ReferenceSkeleton::body(),
        n if n == egomocap::skeleton::HAND_JOINTS => egomocap::ReferenceSkeleton::hand(),
        _ => egomocap::ReferenceSkeleton::whole_body(),
    };
    metrics::ba_mpjpe(&points(pred), &points(gt), &reference).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (n_sequences, seed, length = 196, fps = 30.0, families = None))]
fn gen_motion(n_sequences: usize, seed: u64, length: usize, fps: f64, families: Option<Vec<String>>) -> PyResult<Vec<PySequence>> {
    let mut spec = MotionSpec {
        length,
        fps,
        ..MotionSpec::new(n_sequences, seed)
    };
    if let Some(f) = families {
        spec.families = f.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(err)?;
    }
    Ok(synth::gen_motion(&spec)
        .map_err(err)?
        .into_iter()
        .map(|g| PySequence { inner: g.sequence })
        .collect())
}

/// Renders camera-frame joints; returns EGHM bytes and per-joint flags.
#[pyfunction]
#[pyo3(signature = (joints, camera, dims = (64, 64, 64), sigma = 2.0, depth_range = (0.05, 2.45)))]
fn render_heatmap(
    joints: Vec<[f64; 3]>,
    camera: &PyCamera,
    dims: (usize, usize, usize),
    sigma: f64,
    depth_range: (f64, f64),
) -> PyResult<(Vec<u8>, Vec<bool>)> {
    let (hm, flags) = synth::render_heatmap(&points(joints), &camera.inner, dims, sigma, depth_range).map_err(err)?;
    Ok((hm.to_bytes(), flags))
}

fn decoded_dict<'py>(py: Python<'py>, hm: &Heatmap3D, camera: &PyCamera, opts: &DecodeOptions) -> PyResult<Bound<'py, PyDict>> {
    let d = decode(hm, &camera.inner, opts).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("uvd", d.uvd)?;
    out.set_item("xyz", arrays(&d.xyz))?;
    out.set_item("uncertainty", d.uncertainty)?;
    out.set_item("in_fov", d.in_fov)?;
    Ok(out)
}

/// Decodes one EGHM record.
#[pyfunction]
#[pyo3(signature = (data, camera, temperature = egomocap::heatmap::DEFAULT_TEMPERATURE, smooth_sigma = 1.0))]
fn decode_heatmap<'py>(
    py: Python<'py>,
    data: Vec<u8>,
    camera: &PyCamera,
    temperature: f64,
    smooth_sigma: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let hm = Heatmap3D::from_bytes(&data).map_err(err)?;
    decoded_dict(py, &hm, camera, &DecodeOptions { temperature, smooth_sigma })
}

/// Decodes every record of an EGHM stream file.
#[pyfunction]
fn decode_heatmap_file<'py>(py: Python<'py>, path: PathBuf, camera: &PyCamera) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let opts = DecodeOptions::default();
    load_heatmap_stream(&path)
        .map_err(err)?
        .iter()
        .map(|hm| decoded_dict(py, hm, camera, &opts))
        .collect()
}

/// Runs the command line with `args` (without the program name).
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    egomocap::cli::run(std::iter::once("egomocap".to_string()).chain(args))
}

#[pymodule]
pub fn egomocap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EgomocapError", m.py().get_type::<EgomocapError>())?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(weight, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(pa_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(ba_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(gen_motion, m)?)?;
    m.add_function(wrap_pyfunction!(render_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(decode_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(decode_heatmap_file, m)?)?;
    m.add_function(wrap_pyfunction!(train_denoiser, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
