//! Python bindings: slip laws, meshes, stability constants and the
//! experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use slipfem::experiments::{self, ExperimentConfig};
use slipfem::sliplaw::LawClass;
use slipfem::{stability, Diagonal, Error, TaylorHoodSpace};
use std::path::PathBuf;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidLaw(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import_bound("json")?.call_method1("loads", (text,))?.unbind())
}

fn diagonal(name: &str) -> PyResult<Diagonal> {
    match name {
        "right" => Ok(Diagonal::Right),
        "crossed" => Ok(Diagonal::Crossed),
        _ => Err(PyValueError::new_err(format!("unknown diagonal {name:?}"))),
    }
}

#[pyclass(name = "SlipLaw", frozen)]
#[derive(Clone)]
struct PySlipLaw(slipfem::SlipLaw);

#[pymethods]
impl PySlipLaw {
    #[staticmethod]
    fn navier(gamma: f64) -> Self {
        Self(slipfem::SlipLaw::navier(gamma))
    }

    #[staticmethod]
    #[pyo3(signature = (k, r, epsilon=1e-6))]
    fn power_law(k: f64, r: f64, epsilon: f64) -> PyResult<Self> {
        slipfem::SlipLaw::power_law(k, r, epsilon).map(Self).map_err(to_py_err)
    }

    #[staticmethod]
    fn leroux_rajagopal(a: f64, b: f64, c: f64, theta: f64) -> PyResult<Self> {
        slipfem::SlipLaw::leroux_rajagopal(a, b, c, theta).map(Self).map_err(to_py_err)
    }

    #[staticmethod]
    fn tresca(mu_star: f64, epsilon: f64) -> PyResult<Self> {
        slipfem::SlipLaw::tresca_regularized(mu_star, epsilon).map(Self).map_err(to_py_err)
    }

    #[staticmethod]
    fn stick_slip(gamma_star: f64, mu_star: f64, epsilon: f64) -> PyResult<Self> {
        slipfem::SlipLaw::stick_slip_regularized(gamma_star, mu_star, epsilon).map(Self).map_err(to_py_err)
    }

    #[staticmethod]
    fn fang(a: f64, b: f64, beta_exp: f64, epsilon: f64) -> PyResult<Self> {
        slipfem::SlipLaw::fang_regularized(a, b, beta_exp, epsilon).map(Self).map_err(to_py_err)
    }

    #[staticmethod]
    fn dynamic(gamma_star: f64, beta_star: f64, theta_star: f64) -> PyResult<Self> {
        slipfem::SlipLaw::dynamic_moving_wall(gamma_star, beta_star, theta_star).map(Self).map_err(to_py_err)
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    /// Monotonicity defect.
    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda()
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.r()
    }

    /// `"coercive"` or `"explicit"`.
    #[getter]
    fn class(&self) -> &'static str {
        match self.0.class() {
            LawClass::Coercive => "coercive",
            LawClass::Explicit => "explicit",
        }
    }

    #[pyo3(signature = (v, t=0.0))]
    fn eval(&self, v: [f64; 2], t: f64) -> [f64; 2] {
        self.0.eval(v, t)
    }

    #[pyo3(signature = (v, t=0.0))]
    fn jacobian(&self, v: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        self.0.jacobian(v, t)
    }

    fn wall_velocity(&self, t: f64) -> [f64; 2] {
        self.0.wall_velocity(t)
    }

    /// Sampled check of the structural assumptions; returns a dict with one
    /// entry per clause and an overall `passed` flag.
    #[pyo3(signature = (samples=4000, radius=10.0))]
    fn certify(&self, py: Python<'_>, samples: usize, radius: f64) -> PyResult<PyObject> {
        let cert = self.0.certify(samples, radius);
        let out = to_py(py, &cert)?;
        out.bind(py).set_item("passed", cert.passed())?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("SlipLaw({:?})", self.0.kind)
    }
}

#[pyclass(name = "Mesh", frozen)]
struct PyMesh(slipfem::Mesh);

#[pymethods]
impl PyMesh {
    #[staticmethod]
    #[pyo3(signature = (n, diagonal="right"))]
    fn unit_square(n: usize, diagonal: &str) -> PyResult<Self> {
        Ok(Self(slipfem::Mesh::unit_square(n, self::diagonal(diagonal)?)))
    }

    #[staticmethod]
    #[pyo3(signature = (nx, ny, lx, ly, diagonal="right"))]
    fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64, diagonal: &str) -> PyResult<Self> {
        Ok(Self(slipfem::Mesh::rectangle(nx, ny, lx, ly, self::diagonal(diagonal)?)))
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 2]> {
        self.0.vertices.clone()
    }

    #[getter]
    fn cells(&self) -> Vec<[usize; 3]> {
        self.0.cells.clone()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.0.num_edges()
    }

    /// `(vertices, outward normal, length)` of each boundary facet.
    fn boundary(&self) -> Vec<([usize; 2], [f64; 2], f64)> {
        self.0.facets.iter().map(|f| (f.vertices, f.normal, f.h)).collect()
    }

    /// Velocity and pressure unknown counts of the Taylor-Hood space.
    fn dof_counts(&self) -> (usize, usize) {
        let space = TaylorHoodSpace::new(self.0.clone());
        (space.n_velocity(), space.n_pressure())
    }

    fn __len__(&self) -> usize {
        self.0.num_cells()
    }
}

/// Trace, Korn and inf-sup constants on a unit square whose top wall slips.
#[pyfunction]
#[pyo3(signature = (n, law, nu=1.0, infsup=true))]
fn constants(py: Python<'_>, n: usize, law: &PySlipLaw, nu: f64, infsup: bool) -> PyResult<PyObject> {
    let mesh = slipfem::Mesh::unit_square(n, Diagonal::Right)
        .tag_boundary(slipfem::mesh::top_wall_slip)
        .map_err(to_py_err)?;
    let space = TaylorHoodSpace::new(mesh);
    let report = py
        .allow_threads(|| stability::constants_report(&space, nu, &law.0, infsup))
        .map_err(to_py_err)?;
    to_py(py, &report)
}

#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    /// Parses a JSON object or `key = value` lines; `overrides` are
    /// `key=value` strings. Defaults are filled in immediately.
    #[new]
    #[pyo3(signature = (text, overrides=Vec::new()))]
    fn new(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        ExperimentConfig::parse(text, &overrides).and_then(ExperimentConfig::resolve).map(Self).map_err(to_py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides=Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        ExperimentConfig::load(&path, &overrides).and_then(ExperimentConfig::resolve).map(Self).map_err(to_py_err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.0)
    }

    /// Runs the experiment, writing its files; returns `{"summary", "files"}`.
    fn run(&self, py: Python<'_>) -> PyResult<PyObject> {
        let cfg = &self.0;
        let summary = py.allow_threads(|| experiments::run(cfg)).map_err(to_py_err)?;
        to_py(py, &summary.to_json())
    }

    /// Steady manufactured run at one amplitude; returns wall samples and
    /// error norms without writing files.
    fn steady(&self, py: Python<'_>, amplitude: f64) -> PyResult<PyObject> {
        let cfg = &self.0;
        let out = py.allow_threads(|| experiments::run_steady(cfg, amplitude)).map_err(to_py_err)?;
        let wall: Vec<_> = out.wall.iter().map(|w| (w.x, w.u_tau_abs(), w.sigma_abs())).collect();
        let result = serde_json::json!({
            "amplitude": out.amplitude,
            "max_u_tau": out.max_u_tau(),
            "max_sigma": out.max_sigma(),
            "errors": out.errors,
            "interpolation": out.interpolation,
            "newton_iterations": out.reports.iter().map(|r| r.iterations).sum::<usize>(),
            "wall": wall,
        });
        to_py(py, &result)
    }

    /// Moving-wall run for one wall-inertia weight; returns `(times, probe)`.
    fn dynamic(&self, py: Python<'_>, beta_star: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let cfg = &self.0;
        let mut traj = py.allow_threads(|| experiments::run_dynamic(cfg, beta_star)).map_err(to_py_err)?;
        Ok((traj.times, traj.probe_values.swap_remove(0)))
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.0.echo())
    }
}

#[pymodule]
fn slipfem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySlipLaw>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    Ok(())
}
