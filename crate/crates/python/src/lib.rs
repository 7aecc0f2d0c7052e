//! Python bindings: schemes, detector, apparatus, Fisher information,
//! frame simulation and estimation.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use weakmeter::detector_model::pixel_outcome_pmf;
use weakmeter::estimator::{bootstrap_precision, log_likelihood, mle_estimate};
use weakmeter::fisher::{default_step, total_fisher};
use weakmeter::spectral_meter::{coupling_strength, mean_shift_analytic, mean_shift_numeric, CouplingStrength};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "PhysicalConfig", frozen, from_py_object)]
#[derive(Clone)]
struct PyPhysical(weakmeter::PhysicalConfig);

#[pymethods]
impl PyPhysical {
    #[new]
    #[pyo3(signature = (central_wavelength_nm=796.0, fwhm_nm=12.0, verdet_constant=70.35, crystal_length_m=0.01))]
    fn new(central_wavelength_nm: f64, fwhm_nm: f64, verdet_constant: f64, crystal_length_m: f64) -> PyResult<Self> {
        let p = weakmeter::PhysicalConfig { central_wavelength_nm, fwhm_nm, verdet_constant, crystal_length_m };
        p.validate().map_err(value_err)?;
        Ok(Self(p))
    }

    #[getter]
    fn p0(&self) -> f64 {
        self.0.p0()
    }

    #[getter]
    fn delta_p(&self) -> f64 {
        self.0.delta_p()
    }

    /// Coupling k in nm for a field in T.
    fn coupling(&self, b_tesla: f64) -> f64 {
        coupling_strength(b_tesla, &self.0).nm()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "SchemeConfig", frozen, from_py_object)]
#[derive(Clone)]
struct PyScheme(weakmeter::SchemeConfig);

#[pymethods]
impl PyScheme {
    #[staticmethod]
    fn conventional() -> Self {
        Self(weakmeter::SchemeConfig::conventional())
    }

    #[staticmethod]
    #[pyo3(signature = (epsilon, extinction_ratio=f64::INFINITY))]
    fn standard_weak(epsilon: f64, extinction_ratio: f64) -> PyResult<Self> {
        let s = weakmeter::SchemeConfig::standard_weak(epsilon, extinction_ratio);
        s.validate().map_err(value_err)?;
        Ok(Self(s))
    }

    #[staticmethod]
    #[pyo3(signature = (epsilon, bias_order, extinction_ratio=f64::INFINITY))]
    fn biased_weak(epsilon: f64, bias_order: u32, extinction_ratio: f64) -> PyResult<Self> {
        let s = weakmeter::SchemeConfig::biased_weak(epsilon, bias_order, extinction_ratio);
        s.validate().map_err(value_err)?;
        Ok(Self(s))
    }

    #[getter]
    fn tag(&self) -> &'static str {
        self.0.scheme.tag()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon
    }

    #[getter]
    fn bias_order(&self) -> u32 {
        self.0.bias_order
    }

    #[getter]
    fn extinction_ratio(&self) -> f64 {
        self.0.extinction_ratio
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "DetectorModel", frozen, from_py_object)]
#[derive(Clone)]
struct PyDetector(weakmeter::DetectorModel);

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (saturation_threshold=None, pixel_count=None))]
    fn new(saturation_threshold: Option<u32>, pixel_count: Option<usize>) -> PyResult<Self> {
        let mut d = weakmeter::DetectorModel::default();
        if let Some(t) = saturation_threshold {
            d.saturation_threshold = t;
        }
        if let Some(p) = pixel_count {
            d.pixel_count = p;
        }
        d.validate().map_err(value_err)?;
        Ok(Self(d))
    }

    #[getter]
    fn saturation_threshold(&self) -> u32 {
        self.0.saturation_threshold
    }

    #[getter]
    fn pixel_count(&self) -> usize {
        self.0.pixel_count
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    /// Outcome probabilities `P(k)` for `k = 0..=threshold`.
    fn outcome_pmf(&self, py: Python<'_>, mean_photons: f64) -> Vec<f64> {
        py.detach(|| pixel_outcome_pmf(mean_photons, &self.0).probs().to_vec())
    }
}

#[pyclass(name = "FisherResult", frozen, skip_from_py_object)]
struct PyFisher(weakmeter::FisherResult);

#[pymethods]
impl PyFisher {
    #[getter]
    fn n(&self) -> f64 {
        self.0.n
    }

    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }

    #[getter]
    fn fi_total(&self) -> f64 {
        self.0.fi_total
    }

    #[getter]
    fn fi_per_pixel(&self) -> Vec<f64> {
        self.0.fi_per_pixel.clone()
    }

    #[getter]
    fn frames(&self) -> usize {
        self.0.frames
    }

    #[getter]
    fn crb_precision(&self) -> f64 {
        self.0.crb_precision
    }

    fn with_frames(&self, frames: usize) -> Self {
        Self(self.0.clone().with_frames(frames))
    }
}

#[pyclass(name = "Apparatus", frozen, skip_from_py_object)]
struct PyApparatus(Arc<weakmeter::Apparatus>);

#[pymethods]
impl PyApparatus {
    #[new]
    #[pyo3(signature = (physical=None, detector=None))]
    fn new(physical: Option<PyPhysical>, detector: Option<PyDetector>) -> PyResult<Self> {
        let phys = physical.map(|p| p.0).unwrap_or_default();
        let det = detector.map(|d| d.0).unwrap_or_default();
        Ok(Self(Arc::new(weakmeter::Apparatus::new(phys, det).map_err(value_err)?)))
    }

    #[getter]
    fn pixel_count(&self) -> usize {
        self.0.pixel_count()
    }

    fn expected_counts(&self, scheme: &PyScheme, b_tesla: f64, n: f64) -> PyResult<Vec<f64>> {
        self.0.expected_counts(&scheme.0, b_tesla, n).map_err(value_err)
    }

    fn mean_shift(&self, scheme: &PyScheme, b_tesla: f64) -> PyResult<(f64, f64)> {
        let k = coupling_strength(b_tesla, self.0.phys());
        let s = self.0.spectrum();
        Ok((mean_shift_numeric(&scheme.0, k, s).map_err(value_err)?, mean_shift_analytic(&scheme.0, k, s)))
    }

    /// Same as `mean_shift`, with the coupling given as `k·p0`.
    fn mean_shift_at(&self, scheme: &PyScheme, kp0: f64) -> PyResult<(f64, f64)> {
        let s = self.0.spectrum();
        let k = CouplingStrength(kp0 / s.p0());
        Ok((mean_shift_numeric(&scheme.0, k, s).map_err(value_err)?, mean_shift_analytic(&scheme.0, k, s)))
    }

    #[pyo3(signature = (scheme, n, b_tesla, step=None))]
    fn total_fisher(&self, py: Python<'_>, scheme: &PyScheme, n: f64, b_tesla: f64, step: Option<f64>) -> PyResult<PyFisher> {
        let step = step.unwrap_or_else(|| default_step(b_tesla));
        py.detach(|| total_fisher(&self.0, &scheme.0, n, b_tesla, step)).map(PyFisher).map_err(runtime_err)
    }
}

#[pyclass(name = "FrameSet", frozen, skip_from_py_object)]
struct PyFrameSet(weakmeter::FrameSet);

#[pymethods]
impl PyFrameSet {
    #[staticmethod]
    fn simulate(
        py: Python<'_>,
        app: &PyApparatus,
        scheme: &PyScheme,
        n: f64,
        b_tesla: f64,
        count: usize,
        seed: u64,
    ) -> PyResult<Self> {
        py.detach(|| weakmeter::FrameSet::simulate(&app.0, &scheme.0, n, b_tesla, count, seed))
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        weakmeter::io::read_frame_pool(&path).map(Self).map_err(value_err)
    }

    fn write(&self, path: std::path::PathBuf, config_hash: &str) -> PyResult<()> {
        weakmeter::io::write_frame_pool(&path, &self.0, config_hash).map_err(runtime_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn pixel_count(&self) -> usize {
        self.0.pixel_count()
    }

    fn frame(&self, index: usize) -> PyResult<Vec<u16>> {
        self.0
            .frames()
            .get(index)
            .map(|f| f.electrons.clone())
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(index))
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.0.len()) {
            return Err(pyo3::exceptions::PyIndexError::new_err(i));
        }
        self.0.subset(&indices).map(Self).map_err(value_err)
    }

    fn log_likelihood(&self, py: Python<'_>, app: &PyApparatus, b_tesla: f64) -> PyResult<f64> {
        py.detach(|| log_likelihood(&app.0, &self.0, b_tesla)).map_err(value_err)
    }

    fn mle_estimate(&self, py: Python<'_>, app: &PyApparatus, lo: f64, hi: f64) -> PyResult<f64> {
        py.detach(|| mle_estimate(&app.0, &self.0, (lo, hi))).map_err(runtime_err)
    }
}

#[pyclass(name = "PrecisionReport", frozen, skip_from_py_object)]
struct PyReport(weakmeter::PrecisionReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn estimates(&self) -> Vec<f64> {
        self.0.estimates.clone()
    }

    #[getter]
    fn delta_b(&self) -> f64 {
        self.0.delta_b
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.0.batch_size
    }

    #[getter]
    fn repeats(&self) -> usize {
        self.0.repeats
    }

    #[getter]
    fn failed_repeats(&self) -> usize {
        self.0.failed_repeats
    }
}

/// Bootstrap ΔB; raises RuntimeError when too many repeats fail.
#[pyfunction]
#[pyo3(name = "bootstrap_precision")]
fn py_bootstrap(
    py: Python<'_>,
    app: &PyApparatus,
    pool: &PyFrameSet,
    batch: usize,
    repeats: usize,
    bracket: (f64, f64),
    seed: u64,
) -> PyResult<PyReport> {
    py.detach(|| bootstrap_precision(&app.0, &pool.0, batch, repeats, bracket, seed))
        .map(PyReport)
        .map_err(runtime_err)
}

/// Fisher sweep CSV text for a TOML run configuration.
#[pyfunction]
fn fisher_sweep_csv(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = weakmeter::RunConfig::from_toml(config_toml).map_err(value_err)?;
    cfg.validate().map_err(value_err)?;
    py.detach(|| weakmeter::cli::fisher_sweep_csv(&cfg)).map(|(csv, _)| csv).map_err(runtime_err)
}

#[pymodule]
fn weakmeter_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhysical>()?;
    m.add_class::<PyScheme>()?;
    m.add_class::<PyDetector>()?;
    m.add_class::<PyApparatus>()?;
    m.add_class::<PyFisher>()?;
    m.add_class::<PyFrameSet>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(py_bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_sweep_csv, m)?)?;
    Ok(())
}
