//! Python bindings: load calibrations, correct depth frames and run the
//! simulate/calibrate pipeline from Python.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use depthcal::calib::Frame;
use depthcal::geometry::DepthImage;
use depthcal::io::{read_calibration, read_dataset, write_calibration, write_dataset, DatasetManifest};
use depthcal::maps::Corrector;
use depthcal::pipeline::{calibrate_dataset, worker_threads, CalibrateConfig};
use depthcal::synth::{render_all, FrameRole, SceneParams, SceneSpec};

fn to_py(e: depthcal::Error) -> PyErr {
    match e {
        depthcal::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A loaded calibration file.
#[pyclass(name = "Calibration", module = "depthcal_py", frozen)]
pub struct PyCalibration {
    inner: depthcal::io::Calibration,
}

#[pymethods]
impl PyCalibration {
    /// Depth image size as `(width, height)`.
    #[getter]
    fn size(&self) -> (usize, usize) {
        (self.inner.intr_depth.width, self.inner.intr_depth.height)
    }

    /// Camera-to-depth translation in meters.
    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = self.inner.extrinsic.translation();
        [t.x, t.y, t.z]
    }

    /// Corrects a row-major depth frame in meters; zeros stay invalid.
    fn correct_depth(&self, py: Python<'_>, depth: Vec<f64>) -> PyResult<Vec<f64>> {
        let (w, h) = self.size();
        let img = DepthImage::new(w, h, depth).map_err(to_py)?;
        let c = &self.inner;
        py.detach(|| {
            let threads = worker_threads(None)?;
            let corrector = Corrector::new(c.undistortion.clone(), c.global.clone(), c.intr_depth, threads)?;
            corrector.correct_depth(&img)
        })
        .map(DepthImage::into_data)
        .map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_calibration(&path, &self.inner).map_err(to_py)
    }
}

/// Reads a calibration file.
#[pyfunction]
fn load_calibration(path: PathBuf) -> PyResult<PyCalibration> {
    read_calibration(&path).map(|inner| PyCalibration { inner }).map_err(to_py)
}

/// Renders a default synthetic dataset into `out` and returns the frame count.
#[pyfunction]
#[pyo3(signature = (out, n_train = 30, n_test = 10, seed = 0))]
fn simulate(py: Python<'_>, out: PathBuf, n_train: usize, n_test: usize, seed: u64) -> PyResult<usize> {
    py.detach(|| {
        let p = SceneParams {
            n_train,
            n_test,
            seed,
            ..SceneParams::default()
        };
        let spec = SceneSpec::build(&p)?;
        let rendered = render_all(&spec)?;
        let frames: Vec<Frame> = rendered.iter().map(|f| f.frame.clone()).collect();
        let distances: Vec<Option<f64>> = rendered
            .iter()
            .map(|f| (f.role == FrameRole::Test).then_some(f.distance))
            .collect();
        let manifest = DatasetManifest {
            board: spec.board,
            intr_rgb: spec.intr_rgb,
            intr_depth: spec.intr_depth,
            extrinsic_guess: spec.extrinsic_guess,
            sigma_c: if p.sigma_c > 0.0 { p.sigma_c } else { 0.2 },
            frames: Vec::new(),
        };
        write_dataset(&out, &manifest, &frames, &distances).map(|m| m.frames.len())
    })
    .map_err(to_py)
}

/// Calibrates the dataset in `dataset` with default settings.
#[pyfunction]
fn calibrate(py: Python<'_>, dataset: PathBuf) -> PyResult<PyCalibration> {
    py.detach(|| {
        let ds = read_dataset(&dataset)?;
        calibrate_dataset(&ds, &CalibrateConfig::default())
    })
    .map(|run| PyCalibration { inner: run.calibration })
    .map_err(to_py)
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Adds the module contents to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCalibration>()?;
    m.add_function(wrap_pyfunction!(load_calibration, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}

#[pymodule]
fn depthcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
