//! Python bindings: configs, the simulator, demos, the evolution loop and
//! the self-test suites.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use seil_core::evolution::{self as evo, ExperimentConfig, Session};
use seil_core::microsim::{self as sim, Action, EnvAugConfig, SimState, Task, NUM_TASKS};
use seil_core::storage;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn task(task_id: usize) -> PyResult<Task> {
    if task_id >= NUM_TASKS {
        return Err(PyValueError::new_err(format!("task_id must be below {NUM_TASKS}")));
    }
    Ok(Task::new(task_id))
}

/// Experiment configuration. Every key has a default; overrides use
/// dotted keys such as "policy.lr".
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (overrides = None))]
    fn new(overrides: Option<Vec<String>>) -> PyResult<Self> {
        let inner = ExperimentConfig::default().with_overrides(&overrides.unwrap_or_default()).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_json(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// A copy with `key=value` overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_overrides(&overrides).map_err(value_err)?,
        })
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    #[getter]
    fn shots(&self) -> usize {
        self.inner.shots
    }

    #[getter]
    fn max_rounds(&self) -> u32 {
        self.inner.max_rounds
    }

    fn __repr__(&self) -> String {
        format!("Config(master_seed={}, shots={}, max_rounds={})", self.inner.master_seed, self.inner.shots, self.inner.max_rounds)
    }
}

/// One recorded episode.
#[pyclass(name = "Demo", from_py_object)]
#[derive(Clone)]
struct PyDemo {
    inner: sim::Trajectory,
}

#[pymethods]
impl PyDemo {
    #[getter]
    fn demo_id(&self) -> String {
        self.inner.demo_id()
    }

    #[getter]
    fn task_id(&self) -> usize {
        self.inner.task_id
    }

    #[getter]
    fn source(&self) -> &'static str {
        self.inner.source.as_str()
    }

    #[getter]
    fn success(&self) -> bool {
        self.inner.success
    }

    #[getter]
    fn observations(&self) -> Vec<Vec<f32>> {
        self.inner.steps.iter().map(|(o, _)| o.0.to_vec()).collect()
    }

    #[getter]
    fn actions(&self) -> Vec<[f32; 3]> {
        self.inner.steps.iter().map(|(_, a)| a.0).collect()
    }

    /// Flat 16x16x3 raster of the first frame, row major.
    #[getter]
    fn first_frame(&self) -> Vec<f32> {
        self.inner.first_frame.clone()
    }

    /// Re-simulates the demo and compares every step bit for bit.
    fn replay_check(&self) -> bool {
        sim::replay_check(&self.inner)
    }

    fn to_json(&self) -> String {
        storage::encode_demo(&self.inner)
    }

    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        Ok(Self {
            inner: storage::decode_demo(line).map_err(PyValueError::new_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    fn __repr__(&self) -> String {
        format!("Demo({}, steps={}, success={})", self.inner.demo_id(), self.inner.steps.len(), self.inner.success)
    }
}

/// Interactive simulator for one task.
#[pyclass(name = "Sim")]
struct PySim {
    task: Task,
    state: SimState,
}

#[pymethods]
impl PySim {
    #[new]
    #[pyo3(signature = (task_id, env_seed = 0, augment = true, delta = 0.05))]
    fn new(task_id: usize, env_seed: u64, augment: bool, delta: f32) -> PyResult<Self> {
        let task = task(task_id)?;
        let aug = EnvAugConfig { enabled: augment, delta };
        Ok(Self {
            task,
            state: sim::reset_with_aug(&task, env_seed, &aug),
        })
    }

    fn observation(&self) -> Vec<f32> {
        sim::Observation::of(&self.state, &self.task).0.to_vec()
    }

    /// Applies one action; components are clamped to [-1, 1].
    fn step(&mut self, dx: f32, dy: f32, grip: f32) -> PyResult<Vec<f32>> {
        if self.state.step_count >= sim::HORIZON {
            return Err(runtime_err("episode is over"));
        }
        self.state = sim::step(&self.state, &Action::new(dx, dy, grip));
        Ok(self.observation())
    }

    #[getter]
    fn success(&self) -> bool {
        sim::is_success(&self.state, &self.task)
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.state.step_count
    }

    #[getter]
    fn ee_pos(&self) -> [f32; 2] {
        self.state.ee_pos
    }

    #[getter]
    fn held_block(&self) -> Option<usize> {
        self.state.held_block
    }
}

/// Results of one evolution run.
#[pyclass(name = "Report")]
struct PyReport {
    inner: evo::EvolutionReport,
}

#[pymethods]
impl PyReport {
    /// Mean base success rate per round, round 0 first.
    #[getter]
    fn base_sr(&self) -> Vec<f64> {
        self.inner.rounds.iter().map(|r| r.base.mean_sr()).collect()
    }

    #[getter]
    fn ema_sr(&self) -> Vec<f64> {
        self.inner.rounds.iter().map(|r| r.ema.mean_sr()).collect()
    }

    #[getter]
    fn pool_sizes(&self) -> Vec<usize> {
        self.inner.rounds.iter().map(|r| r.pool_size).collect()
    }

    #[getter]
    fn convergence_round(&self) -> Option<u32> {
        self.inner.convergence_round
    }

    fn growth_rate(&self) -> Option<f64> {
        self.inner.growth_rate()
    }

    fn to_csv(&self) -> PyResult<String> {
        storage::report_csv(&self.inner).map_err(runtime_err)
    }

    fn scored_csv(&self) -> String {
        storage::scored_csv(&self.inner)
    }
}

/// `shots` scripted expert demos per task.
#[pyfunction]
#[pyo3(signature = (master_seed, shots, augment = true, delta = 0.05))]
fn expert_demos(master_seed: u64, shots: usize, augment: bool, delta: f32) -> PyResult<Vec<PyDemo>> {
    let aug = EnvAugConfig { enabled: augment, delta };
    let demos = evo::generate_expert_demos(master_seed, shots, &aug).map_err(runtime_err)?;
    Ok(demos.into_iter().map(|inner| PyDemo { inner }).collect())
}

#[pyfunction]
fn write_demos(path: PathBuf, demos: Vec<PyDemo>) -> PyResult<()> {
    let ts: Vec<_> = demos.into_iter().map(|d| d.inner).collect();
    storage::write_demos(&path, &ts).map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (path, verify = false))]
fn read_demos(path: PathBuf, verify: bool) -> PyResult<Vec<PyDemo>> {
    let ts = storage::read_demos(&path, verify).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(ts.into_iter().map(|inner| PyDemo { inner }).collect())
}

/// Round-0 behavior cloning; returns (base SR, EMA SR).
#[pyfunction]
fn train_baseline(py: Python<'_>, config: &PyConfig) -> PyResult<(f64, f64)> {
    let cfg = config.inner.clone();
    let s = py.detach(|| Session::prepare(&cfg)).map_err(runtime_err)?;
    Ok((s.round0.0.mean_sr(), s.round0.1.mean_sr()))
}

/// Runs the self-evolution loop.
#[pyfunction]
fn evolve(py: Python<'_>, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| evo::run_seil(&cfg)).map_err(runtime_err)?;
    Ok(PyReport { inner })
}

/// Relative improvement in percent; None when the baseline is zero.
#[pyfunction]
fn growth_rate(baseline: f64, final_sr: f64) -> Option<f64> {
    evo::growth_rate(baseline, final_sr)
}

/// Runs the built-in checks; returns (all passed, max gradient error,
/// [(name, passed, detail)]).
#[pyfunction]
fn selftest(py: Python<'_>) -> (bool, f64, Vec<(String, bool, String)>) {
    let r = py.detach(seil_core::selftest::run_selftest);
    let checks = r.checks.iter().map(|c| (c.name.clone(), c.passed, c.detail.clone())).collect();
    (r.passed(), r.max_grad_rel_error, checks)
}

#[pymodule]
fn seil(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDemo>()?;
    m.add_class::<PySim>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(expert_demos, m)?)?;
    m.add_function(wrap_pyfunction!(write_demos, m)?)?;
    m.add_function(wrap_pyfunction!(read_demos, m)?)?;
    m.add_function(wrap_pyfunction!(train_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(growth_rate, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    m.add("NUM_TASKS", NUM_TASKS)?;
    Ok(())
}
