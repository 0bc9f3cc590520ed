//! Python bindings: load or build models, predict, read extended XYZ, compute spectra.

use equivar::checkpoint::Checkpoint;
use equivar::geometry::{AtomicSystem, Mat3, Vec3};
use equivar::io::{parse_extxyz, read_extxyz, write_extxyz};
use equivar::model::{Model, ModelConfig};
use equivar::spectra::{self, RamanOptions, Spectrum, SpectrumOptions};
use equivar::{selftest, Error};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(equivar_py, EquivarError, PyException);

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        EquivarError::new_err(e.to_string())
    }
}

fn system_dict<'py>(py: Python<'py>, s: &AtomicSystem) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("numbers", &s.atomic_numbers)?;
    d.set_item("positions", &s.positions)?;
    let l = &s.labels;
    if let Some(e) = l.energy {
        d.set_item("energy", e)?;
    }
    if let Some(f) = &l.forces {
        d.set_item("forces", f)?;
    }
    if let Some(mu) = l.dipole {
        d.set_item("dipole", mu)?;
    }
    if let Some(a) = l.polarizability {
        d.set_item("polarizability", a)?;
    }
    if let Some(r) = l.spatial_extent {
        d.set_item("spatial_extent", r)?;
    }
    Ok(d)
}

/// A trained or freshly initialized network.
#[pyclass(name = "Model", module = "equivar_py")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    /// Build a model from a JSON configuration string.
    #[new]
    #[pyo3(signature = (config = "{}", seed = 0))]
    fn new(config: &str, seed: u64) -> PyResult<Self> {
        let config: ModelConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel {
            inner: Model::new(config, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: Checkpoint::load(path).map_err(to_py)?.model,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::new(self.inner.clone()).save(path).map_err(to_py)
    }

    /// The configuration as a JSON string.
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.config()).map_err(|e| EquivarError::new_err(e.to_string()))
    }

    /// Every available head for one structure; forces come with an energy head.
    fn predict<'py>(&self, py: Python<'py>, numbers: Vec<u32>, positions: Vec<Vec3>) -> PyResult<Bound<'py, PyDict>> {
        let system = AtomicSystem::new(numbers, positions).map_err(to_py)?;
        let b = equivar::geometry::batch(std::slice::from_ref(&system)).map_err(to_py)?;
        let p = py
            .detach(|| self.inner.predict(&b, self.inner.config().has_energy()))
            .map_err(to_py)?;
        let d = PyDict::new(py);
        if let Some(e) = p.energy {
            d.set_item("energy", e[0])?;
        }
        if let Some(f) = p.forces {
            d.set_item("forces", f)?;
        }
        if let Some(mu) = p.dipole {
            d.set_item("dipole", mu[0])?;
        }
        if let Some(a) = p.polarizability {
            d.set_item("polarizability", a[0])?;
        }
        if let Some(r) = p.spatial_extent {
            d.set_item("spatial_extent", r[0])?;
        }
        if let Some(t) = p.rank1 {
            d.set_item("rank1", &t[0])?;
        }
        Ok(d)
    }
}

/// Frames of an extended XYZ file as dictionaries.
#[pyfunction]
fn read_xyz<'py>(py: Python<'py>, path: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let systems = read_extxyz(path).map_err(to_py)?;
    systems.iter().map(|s| system_dict(py, s)).collect()
}

#[pyfunction]
fn parse_xyz<'py>(py: Python<'py>, text: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let systems = parse_extxyz(text).map_err(to_py)?;
    systems.iter().map(|s| system_dict(py, s)).collect()
}

/// Round-trip a list of `(numbers, positions)` into extended XYZ text.
#[pyfunction]
fn format_xyz(frames: Vec<(Vec<u32>, Vec<Vec3>)>) -> PyResult<String> {
    let systems = frames
        .into_iter()
        .map(|(z, r)| AtomicSystem::new(z, r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    Ok(write_extxyz(&systems))
}

/// `(name, max_error, tolerance, passed)` for each built-in check.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn run_selftest(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let results = py.detach(|| selftest::run(seed)).map_err(to_py)?;
    Ok(results
        .into_iter()
        .map(|r| (r.name, r.max_error, r.tolerance, r.passed))
        .collect())
}

fn options(depth: usize, window: &str, zero_padding: usize, normalization: &str) -> PyResult<SpectrumOptions> {
    let value = serde_json::json!({
        "depth": depth,
        "window": window,
        "zero_padding": zero_padding,
        "normalization": normalization,
    });
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn pair(s: Spectrum) -> (Vec<f64>, Vec<f64>) {
    (s.frequencies, s.intensities)
}

/// `(wavenumbers in cm⁻¹, intensities)` from a dipole series sampled every `dt` fs.
#[pyfunction]
#[pyo3(signature = (dipoles, dt, depth, window = "hann", zero_padding = 2, normalization = "biased"))]
fn ir_spectrum(
    dipoles: Vec<Vec3>,
    dt: f64,
    depth: usize,
    window: &str,
    zero_padding: usize,
    normalization: &str,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let opts = options(depth, window, zero_padding, normalization)?;
    Ok(pair(spectra::ir_spectrum(&dipoles, dt, &opts).map_err(to_py)?))
}

/// `(wavenumbers, isotropic, anisotropic)` from a polarizability series.
#[pyfunction]
#[pyo3(signature = (
    polarizabilities, dt, depth, window = "hann", zero_padding = 2, normalization = "biased",
    prefactor = false, laser_wavelength_nm = 514.0, temperature = 300.0
))]
#[allow(clippy::too_many_arguments)]
fn raman_spectrum(
    polarizabilities: Vec<Mat3>,
    dt: f64,
    depth: usize,
    window: &str,
    zero_padding: usize,
    normalization: &str,
    prefactor: bool,
    laser_wavelength_nm: f64,
    temperature: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let opts = options(depth, window, zero_padding, normalization)?;
    let raman = RamanOptions {
        laser_wavelength_nm,
        temperature,
        prefactor,
    };
    let s = spectra::raman_spectrum(&polarizabilities, dt, &opts, &raman).map_err(to_py)?;
    let (nu, iso) = pair(s.isotropic);
    Ok((nu, iso, s.anisotropic.intensities))
}

#[pymodule]
fn equivar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EquivarError", m.py().get_type::<EquivarError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_xyz, m)?)?;
    m.add_function(wrap_pyfunction!(parse_xyz, m)?)?;
    m.add_function(wrap_pyfunction!(format_xyz, m)?)?;
    m.add_function(wrap_pyfunction!(run_selftest, m)?)?;
    m.add_function(wrap_pyfunction!(ir_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(raman_spectrum, m)?)?;
    Ok(())
}
