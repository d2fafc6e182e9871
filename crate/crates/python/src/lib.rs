//! Python bindings for the `pnp_pbcd` crate.
//!
//! Cubes cross the boundary as flat lists in the crate's native order
//! (row index fastest, then column, then band) together with their dims.
//! Matrices are lists of rows.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pnp_pbcd::detector::{self, Mask};
use pnp_pbcd::prox::SparsityPenalty;
use pnp_pbcd::solver::{self, DenoiserConfig, SolverConfig};
use pnp_pbcd::synth::{synth_scene, SyntheticSpec};
use pnp_pbcd::{io, stiefel, Error, Matrix};

type Dims = (usize, usize, usize);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn mask_from(dims: (usize, usize), truth: Vec<bool>) -> PyResult<Mask> {
    Mask::new(dims, truth).map_err(to_py)
}

/// Dense cube of shape `(n1, n2, n3)`.
#[pyclass(name = "Tensor3", module = "pnp_pbcd_py", from_py_object)]
#[derive(Clone)]
pub struct PyTensor3 {
    inner: pnp_pbcd::Tensor3,
}

#[pymethods]
impl PyTensor3 {
    #[new]
    fn new(dims: Dims, data: Vec<f64>) -> PyResult<Self> {
        let inner = pnp_pbcd::Tensor3::new(dims, data).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn zeros(dims: Dims) -> Self {
        Self { inner: pnp_pbcd::Tensor3::zeros(dims) }
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.inner.dims()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<f64> {
        let (n1, n2, n3) = self.inner.dims();
        if i >= n1 || j >= n2 || k >= n3 {
            return Err(PyValueError::new_err(format!("index ({i}, {j}, {k}) out of range")));
        }
        Ok(self.inner.get(i, j, k))
    }

    /// Mode-`mode` unfolding (1, 2 or 3) as a list of rows.
    fn unfold(&self, mode: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.inner.unfold(mode).map_err(to_py)?))
    }

    #[staticmethod]
    fn fold(rows: Vec<Vec<f64>>, mode: usize, dims: Dims) -> PyResult<Self> {
        let m = matrix_from_rows(&rows)?;
        let inner = pnp_pbcd::Tensor3::fold(&m, mode, dims).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `self ×₃ y` for a `k × n3` matrix `y`.
    fn mode3_product(&self, y: Vec<Vec<f64>>) -> PyResult<Self> {
        let y = matrix_from_rows(&y)?;
        Ok(Self { inner: self.inner.mode3_product(&y).map_err(to_py)? })
    }

    fn fiber_norms(&self) -> Vec<f64> {
        self.inner.fiber_norms()
    }

    fn frob_norm(&self) -> f64 {
        self.inner.frob_norm()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor3(dims={:?})", self.inner.dims())
    }
}

/// Sparsity penalty with its scalar and group proximal maps.
#[pyclass(name = "SparsityPenalty", module = "pnp_pbcd_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyPenalty {
    inner: SparsityPenalty,
}

#[pymethods]
impl PyPenalty {
    #[staticmethod]
    fn l1() -> Self {
        Self { inner: SparsityPenalty::L1 }
    }

    #[staticmethod]
    #[pyo3(signature = (p = 0.1, eps = 1e-5))]
    fn relaxed_lp(p: f64, eps: f64) -> PyResult<Self> {
        Ok(Self { inner: SparsityPenalty::relaxed_lp(p, eps).map_err(to_py)? })
    }

    #[staticmethod]
    fn mcp(lambda: f64, theta: f64) -> PyResult<Self> {
        Ok(Self { inner: SparsityPenalty::mcp(lambda, theta).map_err(to_py)? })
    }

    #[staticmethod]
    fn scad(lambda: f64, theta: f64) -> PyResult<Self> {
        Ok(Self { inner: SparsityPenalty::scad(lambda, theta).map_err(to_py)? })
    }

    fn eval(&self, t: f64) -> f64 {
        self.inner.eval(t)
    }

    fn prox(&self, tau: f64, x: f64) -> f64 {
        self.inner.prox(tau, x)
    }

    fn group_prox(&self, tau: f64, s: Vec<f64>) -> Vec<f64> {
        self.inner.group_prox(tau, &s)
    }

    fn weak_convexity(&self) -> f64 {
        self.inner.weak_convexity()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Output of [`detect`]: the decomposition and its per-iteration history.
#[pyclass(name = "Detection", module = "pnp_pbcd_py", frozen)]
pub struct PyDetection {
    #[pyo3(get)]
    scores: Vec<f64>,
    #[pyo3(get)]
    sparse: PyTensor3,
    #[pyo3(get)]
    eigenimages: PyTensor3,
    #[pyo3(get)]
    basis: Vec<Vec<f64>>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    /// `F` at every recorded iteration, starting with the initial state.
    #[pyo3(get)]
    objective: Vec<f64>,
    /// `(A_S, A_E, A_Z)` per iteration; NaN on the initial row.
    #[pyo3(get)]
    residuals: Vec<(f64, f64, f64)>,
}

/// Runs the solver on `cube` and scores each pixel by its anomaly fiber norm.
#[pyfunction]
#[pyo3(signature = (
    cube, rank, *, delta = 0.25, tau = 1.0, alpha = 0.01, penalty = None,
    gamma = 0.99, a = 0.2, b = 0.4, max_iter = 500, tol = 1e-3
))]
#[allow(clippy::too_many_arguments)]
fn detect(
    py: Python<'_>,
    cube: &PyTensor3,
    rank: usize,
    delta: f64,
    tau: f64,
    alpha: f64,
    penalty: Option<PyPenalty>,
    gamma: f64,
    a: f64,
    b: f64,
    max_iter: usize,
    tol: f64,
) -> PyResult<PyDetection> {
    let cfg = SolverConfig {
        delta,
        tau,
        alpha_s: alpha,
        alpha_e: alpha,
        alpha_z: alpha,
        penalty: penalty.map_or(SolverConfig::with_rank(rank).penalty, |p| p.inner),
        denoiser: DenoiserConfig { gamma, a, b, ..DenoiserConfig::default() },
        max_iter,
        tol,
        ..SolverConfig::with_rank(rank)
    };
    let out = py.detach(|| solver::run(&cube.inner, &cfg)).map_err(to_py)?;
    let records = &out.history.records;
    Ok(PyDetection {
        scores: detector::anomaly_scores(&out.state.s).into_values(),
        basis: matrix_to_rows(out.state.e.matrix()),
        iterations: out.state.iteration,
        converged: out.converged,
        objective: records.iter().map(|r| r.objective).collect(),
        residuals: records.iter().map(|r| (r.residuals.s, r.residuals.e, r.residuals.z)).collect(),
        sparse: PyTensor3 { inner: out.state.s },
        eigenimages: PyTensor3 { inner: out.state.z },
    })
}

/// Global RX scores; the flag reports whether a ridge was added.
#[pyfunction]
fn rx_scores(cube: &PyTensor3) -> PyResult<(Vec<f64>, bool)> {
    let rx = detector::rx_scores(&cube.inner).map_err(to_py)?;
    Ok((rx.scores.into_values(), rx.regularized))
}

/// Trapezoid ROC AUC of `scores` against a boolean mask of shape `dims`.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, truth: Vec<bool>, dims: (usize, usize)) -> PyResult<f64> {
    detector::roc_auc(&scores, &mask_from(dims, truth)?).map_err(to_py)
}

#[pyfunction]
fn mann_whitney_auc(scores: Vec<f64>, truth: Vec<bool>, dims: (usize, usize)) -> PyResult<f64> {
    detector::mann_whitney_auc(&scores, &mask_from(dims, truth)?).map_err(to_py)
}

/// Nearest matrix with orthonormal columns, and whether the input was rank deficient.
#[pyfunction]
fn project_stiefel(rows: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, bool)> {
    let p = stiefel::project_stiefel(&matrix_from_rows(&rows)?).map_err(to_py)?;
    Ok((matrix_to_rows(p.point.matrix()), p.rank_deficient))
}

/// Seeded synthetic scene; returns the observed cube and the anomaly mask.
#[pyfunction]
#[pyo3(signature = (dims, rank, anomalies = 0, magnitude = 0.8, noise = 0.0, seed = 0))]
fn synth(
    dims: Dims,
    rank: usize,
    anomalies: usize,
    magnitude: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(PyTensor3, Vec<bool>)> {
    let spec = SyntheticSpec { dims, rank, anomalies, magnitude, noise, seed };
    let scene = synth_scene(&spec).map_err(to_py)?;
    Ok((PyTensor3 { inner: scene.observed }, scene.truth.data().to_vec()))
}

#[pyfunction]
fn load_hsi(path: &str) -> PyResult<PyTensor3> {
    Ok(PyTensor3 { inner: io::load_hsi(path).map_err(to_py)? })
}

#[pyfunction]
fn save_hsi(path: &str, cube: &PyTensor3) -> PyResult<()> {
    io::save_hsi(path, &cube.inner).map_err(to_py)
}

#[pymodule]
fn pnp_pbcd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor3>()?;
    m.add_class::<PyPenalty>()?;
    m.add_class::<PyDetection>()?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(rx_scores, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_auc, m)?)?;
    m.add_function(wrap_pyfunction!(project_stiefel, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(load_hsi, m)?)?;
    m.add_function(wrap_pyfunction!(save_hsi, m)?)?;
    Ok(())
}
