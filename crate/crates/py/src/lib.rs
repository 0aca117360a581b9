//! Python bindings: controller and plant types, simulation, assumption
//! checks and the certification campaign.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use satpi::analysis::{self, AnalysisOptions};
use satpi::commands::{self, Overrides};
use satpi::config::RunConfig;
use satpi::plants::{self, Example1Config};
use satpi::{ClosedLoopState, Error, Reference, SimConfig};

fn to_py(e: Error) -> PyErr {
    match commands::exit_code(&e) {
        commands::EXIT_CONFIG => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "ControllerConfig", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyController(satpi::ControllerConfig);

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (k, tau_p=0.0, u_min=0.5, u_max=2.0, delta=0.1))]
    fn new(k: f64, tau_p: f64, u_min: f64, u_max: f64, delta: f64) -> PyResult<Self> {
        satpi::ControllerConfig::new(k, tau_p, u_min, u_max, delta).map(PyController).map_err(to_py)
    }

    #[getter]
    fn k(&self) -> f64 {
        self.0.k
    }
    #[getter]
    fn tau_p(&self) -> f64 {
        self.0.tau_p
    }
    #[getter]
    fn u_min(&self) -> f64 {
        self.0.u_min
    }
    #[getter]
    fn u_max(&self) -> f64 {
        self.0.u_max
    }
    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta
    }

    /// Copy with a different integral gain.
    fn with_gain(&self, k: f64) -> Self {
        PyController(self.0.with_gain(k))
    }

    /// Rate of the saturating integrator at state `u_i` under input `w`.
    fn sat_rate(&self, u_i: f64, w: f64) -> f64 {
        satpi::sat_rate(u_i, w, &self.0)
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!(
            "ControllerConfig(k={}, tau_p={}, u_min={}, u_max={}, delta={})",
            c.k, c.tau_p, c.u_min, c.u_max, c.delta
        )
    }
}

#[pyclass(name = "Plant", frozen)]
struct PyPlant(satpi::Plant);

#[pymethods]
impl PyPlant {
    /// The two-state example plant.
    #[staticmethod]
    #[pyo3(signature = (eta=5.0, u_min=0.5, u_max=2.0, delta=0.1))]
    fn example1(eta: f64, u_min: f64, u_max: f64, delta: f64) -> PyResult<Self> {
        let cfg = Example1Config { eta, u_min, u_max, delta };
        plants::example1(&cfg).map(PyPlant).map_err(to_py)
    }

    /// `x' = A x + b u`, `y = c x`; `a` is given row by row.
    #[staticmethod]
    fn linear(a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> PyResult<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("a must be a non-empty square matrix"));
        }
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
        plants::linear_plant(a, b, c).map(PyPlant).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn output(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.0.dim() {
            return Err(PyValueError::new_err("state has the wrong dimension"));
        }
        Ok(self.0.output(&x))
    }

    fn __repr__(&self) -> String {
        format!("Plant(name={:?}, dim={})", self.0.name(), self.0.dim())
    }
}

/// Simulates the closed loop. `reference` is a list of `(t_start, r)`
/// segments starting at 0. Returns a dict of columns plus the event list.
#[pyfunction]
#[pyo3(signature = (plant, controller, reference, x0, u_i, t_end, h=1e-3, record_stride=1))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    plant: &PyPlant,
    controller: &PyController,
    reference: Vec<(f64, f64)>,
    x0: Vec<f64>,
    u_i: f64,
    t_end: f64,
    h: f64,
    record_stride: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let reference = Reference::steps(reference).map_err(to_py)?;
    let sim = SimConfig {
        h,
        t_end,
        record_stride,
        ..Default::default()
    };
    let init = ClosedLoopState::new(x0, u_i);
    let traj = py
        .detach(|| satpi::simulate(&plant.0, &controller.0, &sim, &reference, &init))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("t", traj.rows.iter().map(|r| r.t).collect::<Vec<_>>())?;
    out.set_item("x", traj.rows.iter().map(|r| r.x.clone()).collect::<Vec<_>>())?;
    out.set_item("u_i", traj.rows.iter().map(|r| r.u_i).collect::<Vec<_>>())?;
    out.set_item("u", traj.rows.iter().map(|r| r.u).collect::<Vec<_>>())?;
    out.set_item("y", traj.rows.iter().map(|r| r.y).collect::<Vec<_>>())?;
    out.set_item("r", traj.rows.iter().map(|r| r.r).collect::<Vec<_>>())?;
    out.set_item(
        "events",
        traj.events.iter().map(|e| (e.t, e.kind.as_str(), e.u_i)).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Assumption checks on `plant`; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (plant, controller, grid_size=101, x_seed=None, margin_tol=1e-6))]
fn analyze<'py>(
    py: Python<'py>,
    plant: &PyPlant,
    controller: &PyController,
    grid_size: usize,
    x_seed: Option<Vec<f64>>,
    margin_tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = AnalysisOptions {
        grid_size,
        x_seed: x_seed.unwrap_or_else(|| vec![0.0; plant.0.dim()]),
        margin_tol,
        gain_probe: None,
    };
    let (report, _) = py.detach(|| analysis::analyze(&plant.0, &controller.0, &opts)).map_err(to_py)?;
    json_to_py(py, &report)
}

/// Gain bound from the linearized example loop.
#[pyfunction]
fn kappa_lin(controller: &PyController) -> PyResult<f64> {
    analysis::kappa_lin(&controller.0).map_err(to_py)
}

/// Runs the certification campaign for a TOML config given as text and
/// returns the certificate as a dict.
#[pyfunction]
#[pyo3(signature = (config_toml, seed=None))]
fn certify<'py>(py: Python<'py>, config_toml: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfig::from_toml_str(config_toml).map_err(to_py)?;
    let seed = seed.unwrap_or(cfg.sim.seed);
    let result = py.detach(|| commands::run_campaign(&cfg, seed)).map_err(to_py)?;
    json_to_py(py, &result.certificate)
}

/// Runs a subcommand (`simulate`, `analyze`, `certify` or `sweep`) on a
/// config file. Returns `(exit_code, files)`; errors map to their exit codes.
#[pyfunction]
#[pyo3(signature = (command, config, out=None, seed=None))]
fn run(py: Python<'_>, command: &str, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<(i32, Vec<PathBuf>)> {
    let f = match command {
        "simulate" => commands::cmd_simulate,
        "analyze" => commands::cmd_analyze,
        "certify" => commands::cmd_certify,
        "sweep" => commands::cmd_sweep,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let over = Overrides { out, seed };
    match py.detach(|| f(&config, &over)) {
        Ok(o) => Ok((o.code, o.files)),
        Err(e) => Ok((commands::exit_code(&e), Vec::new())),
    }
}

#[pymodule]
#[pyo3(name = "satpi")]
fn satpi_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyController>()?;
    m.add_class::<PyPlant>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_lin, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
