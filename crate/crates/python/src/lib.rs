//! Python bindings: simulate single trials, run configured sweeps and the acceptance
//! suites, and evaluate the information measures.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qualia_core::aei::AeiSpec;
use qualia_core::agents::MemoryRecording;
use qualia_core::environments::{optimal_return_oracle, EnvironmentModel};
use qualia_core::harness::acceptance;
use qualia_core::harness::config::{default_agent, ExperimentConfig};
use qualia_core::harness::experiment::{run_experiment as run_sweep, TrialSetup};
use qualia_core::harness::output::write_outputs;
use qualia_core::metrics::{trial_performance, trial_reward_qualia, trial_tde_qualia, TdeMode};
use qualia_core::process::{episode_return, write_trace_csv, Action, Observation, RewardChannel, TRACE_CSV_HEADER};
use qualia_core::robustness::{self, CheckResult, FinitePmf, JointPmf, Measure};
use qualia_core::seeding::TrialSeed;
use qualia_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Distribution(_) | Error::SupportMismatch | Error::Representation(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn observation(o: Observation) -> Option<usize> {
    o.index()
}

fn action(a: Action) -> Option<usize> {
    a.index()
}

/// One trial of the agent-environment process. Terminal states and actions appear as `None`.
#[pyclass(name = "Trace", frozen)]
struct PyTrace {
    inner: qualia_core::process::Trace,
}

impl PyTrace {
    fn i_max(&self, i_max: Option<usize>) -> usize {
        i_max.unwrap_or(self.inner.episodes.len())
    }
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    fn __repr__(&self) -> String {
        format!("Trace(steps={}, episodes={})", self.inner.steps.len(), self.inner.episodes.len())
    }

    #[getter]
    fn states(&self) -> Vec<Option<usize>> {
        self.inner.steps.iter().map(|s| observation(s.state)).collect()
    }

    #[getter]
    fn perceptions(&self) -> Vec<Option<usize>> {
        self.inner.steps.iter().map(|s| observation(s.perception)).collect()
    }

    #[getter]
    fn actions(&self) -> Vec<Option<usize>> {
        self.inner.steps.iter().map(|s| action(s.action)).collect()
    }

    #[getter]
    fn rewards(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.reward).collect()
    }

    #[getter]
    fn base_rewards(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.base_reward()).collect()
    }

    #[getter]
    fn td_errors(&self) -> Vec<Option<f64>> {
        self.inner.steps.iter().map(|s| s.td_error).collect()
    }

    #[getter]
    fn likelihood_ratios(&self) -> Vec<Option<f64>> {
        self.inner.steps.iter().map(|s| s.likelihood_ratio).collect()
    }

    /// `(start, end)` step indices of every episode, both inclusive.
    #[getter]
    fn episodes(&self) -> Vec<(usize, usize)> {
        self.inner.episodes.iter().map(|e| (e.start, e.end)).collect()
    }

    #[pyo3(signature = (i, gamma = 1.0))]
    fn episode_return(&self, i: usize, gamma: f64) -> PyResult<f64> {
        episode_return(&self.inner, i, gamma, RewardChannel::Base).map_err(py_err)
    }

    #[pyo3(signature = (i_max = None))]
    fn performance(&self, i_max: Option<usize>) -> PyResult<f64> {
        trial_performance(&self.inner, self.i_max(i_max)).map_err(py_err)
    }

    #[pyo3(signature = (gamma_q, i_max = None))]
    fn reward_qualia(&self, gamma_q: f64, i_max: Option<usize>) -> PyResult<f64> {
        trial_reward_qualia(&self.inner, gamma_q, self.i_max(i_max)).map_err(py_err)
    }

    #[pyo3(signature = (gamma_q, implicit = false, i_max = None))]
    fn tde_qualia(&self, gamma_q: f64, implicit: bool, i_max: Option<usize>) -> PyResult<f64> {
        let mode = if implicit { TdeMode::Implicit } else { TdeMode::Explicit };
        trial_tde_qualia(&self.inner, gamma_q, mode, self.i_max(i_max)).map_err(py_err)
    }

    /// Write the trace in the CLI's per-step CSV layout.
    #[pyo3(signature = (path, trial = 0))]
    fn to_csv(&self, path: PathBuf, trial: usize) -> PyResult<()> {
        let mut text = Vec::new();
        let io = |e| py_err(Error::io(&path, e));
        std::io::Write::write_all(&mut text, format!("{TRACE_CSV_HEADER}\n").as_bytes()).map_err(io)?;
        write_trace_csv(&mut text, trial, &self.inner).map_err(io)?;
        std::fs::write(&path, text).map_err(io)
    }
}

fn environment(name: &str) -> PyResult<EnvironmentModel> {
    EnvironmentModel::from_name(name).map_err(py_err)
}

/// Optimal expected undiscounted return of a named environment.
#[pyfunction]
fn optimal_return(env: &str) -> PyResult<f64> {
    optimal_return_oracle(&environment(env)?).map_err(py_err)
}

/// Run one trial of the actor-critic agent and return its trace.
///
/// `aei` takes the config syntax, e.g. `"reward_bonus(1, 0.5)"`; `memory` is `off`,
/// `hash` or `full`. The RNG stream is derived from `(seed, group, trial)` exactly as
/// in sweeps, so a trace here matches the same trial of a configured run.
#[pyfunction]
#[pyo3(signature = (
    env, episodes, seed = 1, group = 0, trial = 0, baseline = 0.0, aei = "identity", inverse = false,
    alpha = None, beta = None, gamma = None, lambda_ = None, memory = "off"
))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    env: &str,
    episodes: usize,
    seed: u64,
    group: u32,
    trial: u32,
    baseline: f64,
    aei: &str,
    inverse: bool,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    lambda_: Option<f64>,
    memory: &str,
) -> PyResult<PyTrace> {
    let model = environment(env)?;
    let mut agent = default_agent(env).with_baseline(baseline);
    agent.alpha = alpha.unwrap_or(agent.alpha);
    agent.beta = beta.unwrap_or(agent.beta);
    agent.gamma = gamma.unwrap_or(agent.gamma);
    agent.lambda = lambda_.unwrap_or(agent.lambda);
    let memory = match memory {
        "off" => MemoryRecording::Off,
        "hash" => MemoryRecording::Hash,
        "full" => MemoryRecording::Full,
        other => return Err(PyValueError::new_err(format!("unknown memory recording {other:?}"))),
    };
    let setup = TrialSetup {
        aei: aei.parse::<AeiSpec>().map_err(py_err)?,
        inverse,
        memory,
        ..TrialSetup::new(model, agent, episodes)
    };
    let trace = py.detach(|| setup.run(TrialSeed::derive(seed, group, trial))).map_err(py_err)?;
    Ok(PyTrace { inner: trace })
}

/// Run a sweep described by TOML config text and write its tables.
///
/// Returns the paths written, including `manifest.json`.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn run_experiment(py: Python<'_>, config: &str, out_dir: Option<PathBuf>) -> PyResult<Vec<PathBuf>> {
    let mut cfg = ExperimentConfig::from_toml(config).map_err(py_err)?;
    if let Some(dir) = out_dir {
        cfg.output_dir = dir;
    }
    py.detach(|| {
        let result = run_sweep(&cfg)?;
        write_outputs(&result, &cfg.output_dir, &[])
    })
    .map_err(py_err)
}

/// Run a named acceptance suite; one dict per criterion.
#[pyfunction]
#[pyo3(signature = (suite = "all"))]
fn accept<'py>(py: Python<'py>, suite: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let results = py.detach(|| acceptance::run_suite(suite)).map_err(py_err)?;
    results
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("id", r.id)?;
            d.set_item("name", r.name)?;
            d.set_item("measured", r.measured)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

fn check_dict<'py>(py: Python<'py>, check: &CheckResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("check", &check.check)?;
    d.set_item("max_deviation", check.max_deviation)?;
    d.set_item("passed", check.passed)?;
    d.set_item("detail", check.detail.as_deref())?;
    Ok(d)
}

/// Shannon entropy in bits of a probability vector.
#[pyfunction]
fn shannon_entropy(p: Vec<f64>) -> PyResult<f64> {
    Ok(robustness::shannon_entropy(&FinitePmf::new(p).map_err(py_err)?))
}

/// Mutual information in bits of a joint distribution given as rows.
#[pyfunction]
fn mutual_information(joint: Vec<Vec<f64>>) -> PyResult<f64> {
    let cols = joint.first().map_or(0, Vec::len);
    if joint.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("joint distribution rows differ in length"));
    }
    let rows = joint.len();
    let pmf = JointPmf::new(rows, cols, joint.into_iter().flatten().collect()).map_err(py_err)?;
    Ok(robustness::mutual_information(&pmf))
}

/// Relative entropy `D(p || q)` in bits.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let (p, q) = (FinitePmf::new(p).map_err(py_err)?, FinitePmf::new(q).map_err(py_err)?);
    robustness::kl_divergence(&p, &q).map_err(py_err)
}

/// Check a measure (`entropy`, `mi` or `kl`) against random re-encodings.
#[pyfunction]
#[pyo3(signature = (measure = "entropy", n = 8, trials = 1000, seed = 1))]
fn check_invariance<'py>(py: Python<'py>, measure: &str, n: usize, trials: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let measure: Measure = measure.parse().map_err(py_err)?;
    let check = robustness::check_invariance(measure, n, trials, seed).map_err(py_err)?;
    check_dict(py, &check)
}

/// Seed-coupled reward-bonus and TD-bonus demonstrations; returns every check.
#[pyfunction]
#[pyo3(signature = (env = "gridworld", c = 1.0, gamma_q = 0.5, episodes = 10, trials = 100, seed = 1))]
fn exploit_demo<'py>(
    py: Python<'py>,
    env: &str,
    c: f64,
    gamma_q: f64,
    episodes: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let model = environment(env)?;
    let agent = default_agent(env);
    let (reward, td) = py
        .detach(|| {
            Ok::<_, Error>((
                robustness::exploitability_demo(&model, &agent, c, gamma_q, episodes, trials, seed)?,
                robustness::td_bonus_inversion_demo(&model, &agent, c, episodes, trials, seed)?,
            ))
        })
        .map_err(py_err)?;
    reward.checks.iter().chain(&td.checks).map(|c| check_dict(py, c)).collect()
}

#[pymodule]
fn qualia(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(optimal_return, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(accept, m)?)?;
    m.add_function(wrap_pyfunction!(shannon_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(check_invariance, m)?)?;
    m.add_function(wrap_pyfunction!(exploit_demo, m)?)?;
    Ok(())
}
