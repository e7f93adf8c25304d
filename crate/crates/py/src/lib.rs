//! Python bindings for the dc2ac pipeline: grid parsing, DC/AC OPF
//! solves, parameter gradients through the DC-OPF, dataset generation,
//! and training of the adjustment network.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

use dc2ac::acopf;
use dc2ac::datagen;
use dc2ac::dcopf;
use dc2ac::diffgrad;
use dc2ac::grid;
use dc2ac::nnet;
use dc2ac::train;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A validated grid case.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Grid {
    inner: grid::GridCase,
}

#[pymethods]
impl Grid {
    /// Parse a case from text (native or MATPOWER subset).
    #[staticmethod]
    fn parse(text: &str) -> PyResult<(Grid, Vec<String>)> {
        let (case, warnings) = grid::parse_case(text).map_err(value_err)?;
        Ok((Grid { inner: case }, warnings))
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<(Grid, Vec<String>)> {
        let text = std::fs::read_to_string(&path).map_err(value_err)?;
        Self::parse(&text)
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.buses.len()
    }

    #[getter]
    fn n_branches(&self) -> usize {
        self.inner.branches.len()
    }

    #[getter]
    fn n_generators(&self) -> usize {
        self.inner.generators.len()
    }

    #[getter]
    fn n_loads(&self) -> usize {
        self.inner.loads.len()
    }

    #[getter]
    fn ref_bus(&self) -> usize {
        self.inner.ref_bus
    }

    /// SHA-256 of the canonical serialization.
    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_native(&self) -> String {
        self.inner.to_native()
    }

    /// Reference active demands, one per load.
    fn reference_pd(&self) -> Vec<f64> {
        self.inner.loads.iter().map(|l| l.pd_ref).collect()
    }

    fn reference_qd(&self) -> Vec<f64> {
        self.inner.loads.iter().map(|l| l.qd_ref).collect()
    }

    /// Nominal DC parameters (gs per bus, b per branch).
    fn nominal_params(&self) -> (Vec<f64>, Vec<f64>) {
        let p = dcopf::DcParams::nominal(&self.inner);
        (p.gs, p.b)
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(buses={}, branches={}, generators={}, loads={})",
            self.inner.buses.len(),
            self.inner.branches.len(),
            self.inner.generators.len(),
            self.inner.loads.len()
        )
    }
}

fn demands_or_reference(grid: &Grid, pd: Option<Vec<f64>>) -> Vec<f64> {
    pd.unwrap_or_else(|| grid.reference_pd())
}

/// Solve the DC-OPF. `gs`/`b` default to the nominal parameters.
#[pyfunction]
#[pyo3(signature = (grid, pd=None, gs=None, b=None, tol=1e-8))]
fn solve_dc(
    py: Python<'_>,
    grid: &Grid,
    pd: Option<Vec<f64>>,
    gs: Option<Vec<f64>>,
    b: Option<Vec<f64>>,
    tol: f64,
) -> PyResult<Py<PyDict>> {
    let nominal = dcopf::DcParams::nominal(&grid.inner);
    let params = dcopf::DcParams {
        gs: gs.unwrap_or(nominal.gs),
        b: b.unwrap_or(nominal.b),
    };
    let pd = demands_or_reference(grid, pd);
    let sol = dcopf::solve_dcopf(&grid.inner, &params, &pd, tol).map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("pg", &sol.pg)?;
    out.set_item("pf", &sol.pf)?;
    out.set_item("va", &sol.va)?;
    out.set_item("shed", &sol.phi)?;
    out.set_item("prices", &sol.lambda_p)?;
    out.set_item("objective", sol.objective)?;
    Ok(out.into())
}

/// Solve the AC-OPF. Demands default to the reference loads.
#[pyfunction]
#[pyo3(signature = (grid, pd=None, qd=None, tol=1e-6))]
fn solve_ac(
    py: Python<'_>,
    grid: &Grid,
    pd: Option<Vec<f64>>,
    qd: Option<Vec<f64>>,
    tol: f64,
) -> PyResult<Py<PyDict>> {
    let pd = demands_or_reference(grid, pd);
    let qd = qd.unwrap_or_else(|| grid.reference_qd());
    let sol = acopf::solve_acopf(&grid.inner, &pd, &qd, tol).map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("pg", &sol.pg)?;
    out.set_item("qg", &sol.qg)?;
    out.set_item("vm", &sol.vm)?;
    out.set_item("va", &sol.va)?;
    out.set_item("pf", &sol.pf)?;
    out.set_item("qf", &sol.qf)?;
    out.set_item("pt", &sol.pt)?;
    out.set_item("qt", &sol.qt)?;
    out.set_item("objective", sol.objective)?;
    out.set_item("kkt_residual", sol.kkt_residual)?;
    Ok(out.into())
}

/// Gradient of a scalar loss through the DC-OPF solution map: given the
/// loss gradient in (pg, pf, va), returns (d_gs, d_b).
#[pyfunction]
#[pyo3(signature = (grid, pd, gs, b, dl_pg, dl_pf, dl_va, tol=1e-10, eps_active=1e-6))]
#[allow(clippy::too_many_arguments)]
fn dc_gradient(
    grid: &Grid,
    pd: Vec<f64>,
    gs: Vec<f64>,
    b: Vec<f64>,
    dl_pg: Vec<f64>,
    dl_pf: Vec<f64>,
    dl_va: Vec<f64>,
    tol: f64,
    eps_active: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let params = dcopf::DcParams { gs, b };
    let sol = dcopf::solve_dcopf(&grid.inner, &params, &pd, tol).map_err(runtime_err)?;
    let lin = diffgrad::linearize_kkt(&grid.inner, &params, &pd, &sol, eps_active)
        .map_err(runtime_err)?;
    let g = lin
        .adjoint_gradient(&dl_pg, &dl_pf, &dl_va)
        .map_err(runtime_err)?;
    Ok((g.d_gs, g.d_b))
}

/// AC-OPF-labeled scenarios for one grid.
#[pyclass]
struct Dataset {
    inner: datagen::Dataset,
}

#[pymethods]
impl Dataset {
    /// Sample scenarios and label them by solving the AC-OPF.
    #[staticmethod]
    #[pyo3(signature = (grid, samples, seed=0, workers=1, alpha_min=0.7, alpha_max=1.1, eps_max=0.15))]
    fn generate(
        grid: &Grid,
        samples: usize,
        seed: u64,
        workers: usize,
        alpha_min: f64,
        alpha_max: f64,
        eps_max: f64,
    ) -> PyResult<Dataset> {
        let config = datagen::SamplerConfig {
            alpha_min,
            alpha_max,
            eps_max,
        };
        let inner = datagen::generate_dataset(&grid.inner, &config, samples, seed, workers)
            .map_err(runtime_err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, expected_case_hash=None))]
    fn load(path: PathBuf, expected_case_hash: Option<&str>) -> PyResult<Dataset> {
        let inner = datagen::Dataset::load(&path, expected_case_hash).map_err(value_err)?;
        Ok(Dataset { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(runtime_err)
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.inner.train.len()
    }

    #[getter]
    fn n_val(&self) -> usize {
        self.inner.val.len()
    }

    #[getter]
    fn case_hash(&self) -> String {
        self.inner.case_hash.clone()
    }

    /// One sample as a dict; split is "train" or "val".
    fn sample(&self, py: Python<'_>, split: &str, i: usize) -> PyResult<Py<PyDict>> {
        let list = match split {
            "train" => &self.inner.train,
            "val" => &self.inner.val,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        let s = list
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range")))?;
        let out = PyDict::new(py);
        out.set_item("index", s.index)?;
        out.set_item("pd", &s.pd)?;
        out.set_item("qd", &s.qd)?;
        out.set_item("pg", &s.pg)?;
        out.set_item("qg", &s.qg)?;
        out.set_item("vm", &s.vm)?;
        out.set_item("va", &s.va)?;
        out.set_item("pf", &s.pf)?;
        out.set_item("objective", s.objective)?;
        Ok(out.into())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(train={}, val={}, failed={})",
            self.inner.train.len(),
            self.inner.val.len(),
            self.inner.failed
        )
    }
}

/// A trained demand -> DC-parameter adjustment network.
#[pyclass]
struct Model {
    inner: nnet::Mlp,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        let mut file = std::fs::File::open(&path).map_err(value_err)?;
        let inner = nnet::Mlp::read_from(&mut file).map_err(value_err)?;
        Ok(Model { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut file = std::fs::File::create(&path).map_err(runtime_err)?;
        self.inner.write_to(&mut file).map_err(runtime_err)
    }

    /// Adjusted (gs, b) for the given demands.
    fn predict_params(&self, grid: &Grid, pd: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        if self.inner.n_inputs() != grid.inner.loads.len()
            || self.inner.n_outputs() != grid.inner.buses.len() + grid.inner.branches.len()
        {
            return Err(PyValueError::new_err(
                "model shape does not match this grid's parameter layout",
            ));
        }
        let x = train::normalized_input(&grid.inner, &pd);
        let (y, _) = self.inner.forward(&x);
        let params = train::params_from_output(&grid.inner, &y);
        Ok((params.gs, params.b))
    }

    #[getter]
    fn n_inputs(&self) -> usize {
        self.inner.n_inputs()
    }

    #[getter]
    fn n_outputs(&self) -> usize {
        self.inner.n_outputs()
    }
}

/// Train the adjustment network; returns the model and the per-epoch
/// (train_loss, val_loss) history.
#[pyfunction]
#[pyo3(signature = (grid, dataset, epochs=50, lr=1e-4, batch_size=16, patience=10, seed=0))]
fn train_dc2ac(
    grid: &Grid,
    dataset: &Dataset,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    patience: usize,
    seed: u64,
) -> PyResult<(Model, Vec<(f64, f64)>)> {
    let config = train::TrainConfig {
        epochs,
        lr,
        batch_size,
        patience,
        seed,
        lp_tol: 1e-8,
    };
    let outcome = train::train_dc2ac(
        &grid.inner,
        &dataset.inner.train,
        &dataset.inner.val,
        &config,
        None,
    )
    .map_err(runtime_err)?;
    let history = outcome
        .history
        .iter()
        .map(|h| (h.train_loss, h.val_loss))
        .collect();
    Ok((Model { inner: outcome.net }, history))
}

/// Mean |pg| error of nominal DC-OPF and the adjusted model against the
/// dataset's AC-OPF labels, over the validation split.
#[pyfunction]
#[pyo3(signature = (grid, dataset, model=None))]
fn evaluate(
    py: Python<'_>,
    grid: &Grid,
    dataset: &Dataset,
    model: Option<&Model>,
) -> PyResult<Py<PyDict>> {
    let report = train::evaluate(
        &grid.inner,
        &dataset.inner.val,
        model.map(|m| &m.inner),
        None,
        1e-8,
    )
    .map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("dc_l1_pg", report.dc.mean.pg)?;
    out.set_item("dc_l1_pf", report.dc.mean.pf)?;
    out.set_item("dc_l1_va", report.dc.mean.va)?;
    if let Some(m) = report.dc2ac {
        out.set_item("dc2ac_l1_pg", m.mean.pg)?;
        out.set_item("dc2ac_l1_pf", m.mean.pf)?;
        out.set_item("dc2ac_l1_va", m.mean.va)?;
    }
    if let Some(wr) = report.dc2ac_win_rate {
        out.set_item("dc2ac_win_rate", wr)?;
    }
    Ok(out.into())
}

#[pymodule]
fn dc2ac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(solve_dc, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ac, m)?)?;
    m.add_function(wrap_pyfunction!(dc_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(train_dc2ac, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
