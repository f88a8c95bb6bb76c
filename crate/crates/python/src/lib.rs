//! Python bindings: `import mcem_py`.
//!
//! Parameters cross the boundary as plain lists of floats in layout order
//! (`[mu, sigma_u2, sigma_e2]` for the linear mixed model, `[beta, sigma2]`
//! for the GLMM). Seeds select stream 0 of the seeded generator, the same
//! convention as the command-line tool, so results agree between the two.

use pyo3::exceptions::{PyIOError, PyNotImplementedError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mcem::diagnostics::trace_write;
use mcem::engine::require_summable_schedule;
use mcem::glmm::{glmm_direct_mle, glmm_loglik_quadrature, GLMM_LAYOUT};
use mcem::lmm::{lmm_em_step, lmm_loglik, LMM_LAYOUT};
use mcem::{
    rng_stream, run_em, run_mcem, run_mcem_adaptive, stable_mcem_run, AdaptiveConfig, Error,
    LmmTheta, Model, ScheduleConfig, StableConfig, Theta,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Capability(_) => PyNotImplementedError::new_err(e.to_string()),
        Error::Io { .. } | Error::Parse { .. } => PyIOError::new_err(e.to_string()),
        Error::Convergence(_) | Error::SingularHessian => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for mcem::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Stopping rule: relative change below `epsilon` for `consecutive`
/// iterations in a row, at most `max_iter` updates.
#[pyclass(name = "StoppingConfig", frozen, from_py_object)]
#[derive(Clone)]
struct PyStopping(mcem::StoppingConfig);

#[pymethods]
impl PyStopping {
    #[new]
    #[pyo3(signature = (delta=1e-3, epsilon=1e-6, consecutive=3, max_iter=500))]
    fn new(delta: f64, epsilon: f64, consecutive: usize, max_iter: usize) -> PyResult<Self> {
        mcem::StoppingConfig::new(delta, epsilon, consecutive, max_iter)
            .py()
            .map(Self)
    }

    /// Exactly `n` updates; the relative-change rule never fires.
    #[staticmethod]
    fn iterations(n: usize) -> Self {
        Self(mcem::StoppingConfig::iterations(n))
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon
    }
    #[getter]
    fn consecutive(&self) -> usize {
        self.0.consecutive
    }
    #[getter]
    fn max_iter(&self) -> usize {
        self.0.max_iter
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Monte Carlo sample-size schedule.
#[pyclass(name = "Schedule", frozen, from_py_object)]
#[derive(Clone)]
struct PySchedule(ScheduleConfig);

#[pymethods]
impl PySchedule {
    #[staticmethod]
    fn constant(m0: usize) -> PyResult<Self> {
        ScheduleConfig::constant(m0).py().map(Self)
    }

    /// `m_t = ceil(m0 (1 + t)^alpha)`, `alpha > 1`.
    #[staticmethod]
    fn polynomial(m0: usize, alpha: f64) -> PyResult<Self> {
        ScheduleConfig::polynomial(m0, alpha).py().map(Self)
    }

    fn size(&self, t: usize) -> usize {
        self.0.size(t)
    }

    /// Upper bound on the sum of `1 / m_t`, or None when it diverges.
    fn reciprocal_sum_bound(&self) -> Option<f64> {
        self.0.reciprocal_sum_bound()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Iteration history of one run. Record 0 is the starting value.
#[pyclass(name = "Trace", frozen)]
struct PyTrace(mcem::Trace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn names(&self) -> Vec<&'static str> {
        self.0.names.clone()
    }
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations()
    }
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }
    #[getter]
    fn thetas(&self) -> Vec<Vec<f64>> {
        self.0
            .records
            .iter()
            .map(|r| r.theta.values().to_vec())
            .collect()
    }
    #[getter]
    fn logliks(&self) -> Vec<f64> {
        self.0.logliks()
    }
    #[getter]
    fn m(&self) -> Vec<usize> {
        self.0.records.iter().map(|r| r.m).collect()
    }
    #[getter]
    fn p(&self) -> Vec<usize> {
        self.0.records.iter().map(|r| r.p).collect()
    }
    #[getter]
    fn final_theta(&self) -> Vec<f64> {
        self.0
            .final_theta()
            .map(|t| t.values().to_vec())
            .unwrap_or_default()
    }

    /// Writes the trace CSV (`t,m,p,loglik,<names>`).
    fn to_csv(&self, path: &str) -> PyResult<()> {
        trace_write(&self.0, path).py()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(iterations={}, converged={}, final={:?})",
            self.0.iterations(),
            self.0.converged,
            self.final_theta()
        )
    }
}

/// Shared drivers over any core model.
fn drive_em<M: Model>(
    py: Python<'_>,
    model: &M,
    layout: &'static [mcem::Component],
    theta0: Vec<f64>,
    stop: Option<PyStopping>,
) -> PyResult<PyTrace> {
    let th = Theta::new(layout, theta0).py()?;
    let stop = stop.map(|s| s.0).unwrap_or_default();
    py.detach(|| run_em(model, &th, &stop)).py().map(PyTrace)
}

#[allow(clippy::too_many_arguments)]
fn drive_mcem<M: Model>(
    py: Python<'_>,
    model: &M,
    layout: &'static [mcem::Component],
    theta0: Vec<f64>,
    schedule: PySchedule,
    stop: Option<PyStopping>,
    seed: u64,
) -> PyResult<PyTrace> {
    let th = Theta::new(layout, theta0).py()?;
    let stop = stop.map(|s| s.0).unwrap_or_default();
    py.detach(|| run_mcem(model, &th, &schedule.0, &stop, &mut rng_stream(seed, 0)))
        .py()
        .map(PyTrace)
}

#[allow(clippy::too_many_arguments)]
fn drive_stable<M: Model>(
    py: Python<'_>,
    model: &M,
    layout: &'static [mcem::Component],
    theta0: Vec<f64>,
    schedule: PySchedule,
    r0: f64,
    c: f64,
    stop: Option<PyStopping>,
    seed: u64,
) -> PyResult<PyTrace> {
    require_summable_schedule(&schedule.0).py()?;
    let th = Theta::new(layout, theta0).py()?;
    let cfg = StableConfig::uniform(th, r0, c).py()?;
    let stop = stop.map(|s| s.0).unwrap_or_default();
    py.detach(|| stable_mcem_run(model, &cfg, &schedule.0, &stop, &mut rng_stream(seed, 0)))
        .py()
        .map(PyTrace)
}

#[allow(clippy::too_many_arguments)]
fn drive_adaptive<M: Model>(
    py: Python<'_>,
    model: &M,
    layout: &'static [mcem::Component],
    theta0: Vec<f64>,
    m_start: usize,
    m_cap: usize,
    stop: Option<PyStopping>,
    seed: u64,
) -> PyResult<PyTrace> {
    let th = Theta::new(layout, theta0).py()?;
    let cfg = AdaptiveConfig {
        m_start,
        m_cap,
        ..AdaptiveConfig::default()
    };
    cfg.validate().py()?;
    let stop = stop.map(|s| s.0).unwrap_or_default();
    py.detach(|| run_mcem_adaptive(model, &th, &cfg, &stop, &mut rng_stream(seed, 0)))
        .py()
        .map(PyTrace)
}

/// One-way random-effects linear mixed model bound to grouped responses.
#[pyclass(name = "LmmModel", frozen)]
struct PyLmm(mcem::LmmModel);

#[pymethods]
impl PyLmm {
    /// `groups`: one list of responses per group.
    #[new]
    fn new(groups: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self(mcem::LmmModel::new(
            mcem::GroupedDataset::new(groups).py()?,
        )))
    }

    /// The six-bull artificial insemination data.
    #[staticmethod]
    fn bulls() -> Self {
        Self(mcem::LmmModel::bulls())
    }

    /// Reads a `bull,rate` CSV.
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        Ok(Self(mcem::LmmModel::new(
            mcem::GroupedDataset::from_csv_path(path).py()?,
        )))
    }

    #[staticmethod]
    fn simulate(sizes: Vec<usize>, truth: Vec<f64>, seed: u64) -> PyResult<Self> {
        let t = LmmTheta::from_slice(&truth).py()?;
        let data = mcem::GroupedDataset::simulate(&sizes, &t, &mut rng_stream(seed, 0)).py()?;
        Ok(Self(mcem::LmmModel::new(data)))
    }

    #[getter]
    fn groups(&self) -> Vec<Vec<f64>> {
        self.0.data.groups().to_vec()
    }

    fn loglik(&self, theta: Vec<f64>) -> PyResult<f64> {
        Ok(lmm_loglik(
            &LmmTheta::from_slice(&theta).py()?,
            &self.0.data,
        ))
    }

    fn em_step(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        let t = LmmTheta::from_slice(&theta).py()?;
        Ok(lmm_em_step(&t, &self.0.data).py()?.to_vec())
    }

    fn mcem_step(
        &self,
        py: Python<'_>,
        theta: Vec<f64>,
        m: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let th = Theta::new(&LMM_LAYOUT, theta).py()?;
        let next = py
            .detach(|| self.0.mcem_step(&th, m, &mut rng_stream(seed, 0)))
            .py()?;
        Ok(next.values().to_vec())
    }

    #[pyo3(signature = (theta0, stop=None))]
    fn run_em(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        drive_em(py, &self.0, &LMM_LAYOUT, theta0, stop)
    }

    #[pyo3(signature = (theta0, stop=None))]
    fn run_em_gradient(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        let th = Theta::new(&LMM_LAYOUT, theta0).py()?;
        let stop = stop.map(|s| s.0).unwrap_or_default();
        py.detach(|| self.0.run_em_gradient(&th, &stop))
            .py()
            .map(PyTrace)
    }

    #[pyo3(signature = (theta0, schedule, seed, stop=None))]
    fn run_mcem(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        schedule: PySchedule,
        seed: u64,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        drive_mcem(py, &self.0, &LMM_LAYOUT, theta0, schedule, stop, seed)
    }

    #[pyo3(signature = (theta0, schedule, seed, r0=0.5, c=2.0, stop=None))]
    #[allow(clippy::too_many_arguments)]
    fn run_stable_mcem(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        schedule: PySchedule,
        seed: u64,
        r0: f64,
        c: f64,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        drive_stable(
            py,
            &self.0,
            &LMM_LAYOUT,
            theta0,
            schedule,
            r0,
            c,
            stop,
            seed,
        )
    }

    #[pyo3(signature = (theta0, seed, m_start=1000, m_cap=1_000_000, stop=None))]
    fn run_mcem_adaptive(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        seed: u64,
        m_start: usize,
        m_cap: usize,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        drive_adaptive(py, &self.0, &LMM_LAYOUT, theta0, m_start, m_cap, stop, seed)
    }
}

/// Logit-normal random-intercept GLMM bound to binary panel data.
#[pyclass(name = "GlmmModel", frozen)]
struct PyGlmm(mcem::GlmmModel);

#[pymethods]
impl PyGlmm {
    /// `x[i][j]` covariates and `y[i][j]` in {0, 1}, one list per group.
    #[new]
    #[pyo3(signature = (x, y, burnin=500, nodes=20))]
    fn new(x: Vec<Vec<f64>>, y: Vec<Vec<u8>>, burnin: usize, nodes: usize) -> PyResult<Self> {
        let data = mcem::PanelDataset::new(x, y).py()?;
        Ok(Self(mcem::GlmmModel {
            data,
            burnin,
            nodes,
        }))
    }

    /// Benchmark design: `q` groups of `n` with `x_ij = j / n`.
    #[staticmethod]
    fn simulate(q: usize, n: usize, truth: Vec<f64>, seed: u64) -> PyResult<Self> {
        if truth.len() != 2 {
            return Err(PyValueError::new_err("truth must be [beta, sigma2]"));
        }
        let t = mcem::GlmmTheta::new(truth[0], truth[1]).py()?;
        let data = mcem::PanelDataset::simulate(q, n, &t, &mut rng_stream(seed, 0)).py()?;
        Ok(Self(mcem::GlmmModel::new(data)))
    }

    /// Reads a `group,x,y` CSV.
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        Ok(Self(mcem::GlmmModel::new(
            mcem::PanelDataset::from_csv_path(path).py()?,
        )))
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.0.data.x().to_vec()
    }

    #[getter]
    fn y(&self) -> Vec<Vec<u8>> {
        self.0.data.y().to_vec()
    }

    /// Adaptive Gauss–Hermite log-likelihood.
    #[pyo3(signature = (theta, nodes=20))]
    fn loglik(&self, theta: Vec<f64>, nodes: usize) -> PyResult<f64> {
        let th = Theta::new(&GLMM_LAYOUT, theta).py()?;
        let t = mcem::GlmmTheta::from_theta(&th).py()?;
        glmm_loglik_quadrature(&t, &self.0.data, nodes).py()
    }

    /// Direct maximizer of the quadrature likelihood.
    fn direct_mle(&self, py: Python<'_>) -> PyResult<Vec<f64>> {
        let t = py.detach(|| glmm_direct_mle(&self.0.data)).py()?;
        Ok(vec![t.beta, t.sigma2])
    }

    fn mcem_step(
        &self,
        py: Python<'_>,
        theta: Vec<f64>,
        m: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let th = Theta::new(&GLMM_LAYOUT, theta).py()?;
        let next = py
            .detach(|| self.0.mcem_step(&th, m, &mut rng_stream(seed, 0)))
            .py()?;
        Ok(next.values().to_vec())
    }

    #[pyo3(signature = (theta0, schedule, seed, stop=None))]
    fn run_mcem(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        schedule: PySchedule,
        seed: u64,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        drive_mcem(py, &self.0, &GLMM_LAYOUT, theta0, schedule, stop, seed)
    }

    #[pyo3(signature = (theta0, schedule, seed, r0=0.5, c=2.0, stop=None))]
    #[allow(clippy::too_many_arguments)]
    fn run_stable_mcem(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        schedule: PySchedule,
        seed: u64,
        r0: f64,
        c: f64,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        drive_stable(
            py,
            &self.0,
            &GLMM_LAYOUT,
            theta0,
            schedule,
            r0,
            c,
            stop,
            seed,
        )
    }

    #[pyo3(signature = (theta0, seed, m_start=1000, m_cap=1_000_000, stop=None))]
    fn run_mcem_adaptive(
        &self,
        py: Python<'_>,
        theta0: Vec<f64>,
        seed: u64,
        m_start: usize,
        m_cap: usize,
        stop: Option<PyStopping>,
    ) -> PyResult<PyTrace> {
        drive_adaptive(
            py,
            &self.0,
            &GLMM_LAYOUT,
            theta0,
            m_start,
            m_cap,
            stop,
            seed,
        )
    }
}

/// `max_i |curr_i - prev_i| / (|prev_i| + delta)`.
#[pyfunction]
#[pyo3(signature = (prev, curr, delta=1e-3))]
fn relative_change(prev: Vec<f64>, curr: Vec<f64>, delta: f64) -> PyResult<f64> {
    mcem::em::relative_change(&prev, &curr, delta).py()
}

/// True when the last `k` entries of `history` are all true.
#[pyfunction]
fn stopping_consecutive(history: Vec<bool>, k: usize) -> bool {
    mcem::stopping_consecutive(&history, k)
}

#[pymodule]
fn mcem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStopping>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyLmm>()?;
    m.add_class::<PyGlmm>()?;
    m.add_function(wrap_pyfunction!(relative_change, m)?)?;
    m.add_function(wrap_pyfunction!(stopping_consecutive, m)?)?;
    m.add("BULLS_MLE", mcem::lmm::BULLS_MLE.to_vec())?;
    let b = mcem::glmm::BENCHMARK_MLE;
    m.add("BENCHMARK_MLE", vec![b.beta, b.sigma2])?;
    Ok(())
}
