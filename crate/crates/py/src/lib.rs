//! Python bindings: the environment, the trainer, the baselines and a few
//! pure functions, all driven from configuration text in the CLI's TOML
//! format.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gridflux::algos::{self, Trainer as CoreTrainer};
use gridflux::baselines::{self, Demand, UniformRandom, ZeroDelay};
use gridflux::cli::AlgoChoice;
use gridflux::config::{parse_config, EnvConfig, TrainConfig};
use gridflux::env::{GridEnv, StepResult};
use gridflux::error::GridError;
use gridflux::metrics::IterationMetrics;
use gridflux::pricing::{self, PriceWindow};

fn py_err(e: GridError) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn configs(text: Option<&str>) -> PyResult<(EnvConfig, TrainConfig)> {
    parse_config(text.unwrap_or("")).map_err(py_err)
}

fn metrics_dict<'py>(py: Python<'py>, m: &IterationMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iteration", m.iteration)?;
    d.set_item("seed", m.seed)?;
    d.set_item("avg_reward_per_day", m.avg_reward_per_day)?;
    d.set_item("avg_cost_per_day", m.avg_cost_per_day)?;
    d.set_item("avg_energy_per_day", m.avg_energy_per_day)?;
    d.set_item("par", m.par)?;
    d.set_item("tasks_completed_pct", m.tasks_completed_pct)?;
    d.set_item("wall_time", m.wall_time)?;
    Ok(d)
}

/// Multi-household environment.
///
/// ```python
/// env = Env(seed=1)
/// obs = env.reset(1)
/// obs, rewards, done, info = env.step([[0.0] * env.n_appliances] * env.n_households)
/// ```
#[pyclass]
struct Env {
    inner: GridEnv,
}

impl Env {
    fn encoded(&self, r: &StepResult) -> Vec<Vec<f64>> {
        self.inner.encode_observations(r)
    }
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let (env, _) = configs(config)?;
        let (inner, _) = GridEnv::reset_with(env, seed).map_err(py_err)?;
        Ok(Env { inner })
    }

    #[getter]
    fn n_households(&self) -> usize {
        self.inner.config().n_households
    }

    #[getter]
    fn n_appliances(&self) -> usize {
        self.inner.config().n_appliances()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.config().obs_dim()
    }

    #[getter]
    fn step_hours(&self) -> f64 {
        self.inner.config().step_hours
    }

    /// Starts a fresh episode at 00:00 and returns the encoded observations.
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let r = self.inner.reset(seed);
        self.encoded(&r)
    }

    /// Applies one delay per household and appliance. Returns
    /// `(observations, rewards, done, info)`.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        delays: Vec<Vec<f64>>,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, bool, Bound<'py, PyDict>)> {
        let r = self.inner.step(&delays).map_err(py_err)?;
        let obs = self.encoded(&r);
        let info = PyDict::new(py);
        if let Some(i) = &r.info {
            info.set_item("interval", i.interval)?;
            info.set_item("energy", i.energy.clone())?;
            info.set_item("cost", i.cost.clone())?;
            info.set_item("price", i.price)?;
            info.set_item("arrived", i.arrived.clone())?;
            info.set_item("completed", i.completed.clone())?;
        }
        Ok((obs, r.rewards, r.done, info))
    }
}

/// One training run for one seed.
#[pyclass(unsendable)]
struct Trainer {
    inner: CoreTrainer,
}

#[pymethods]
impl Trainer {
    /// `algo` is one of `mappo`, `dppo`, `a2c`.
    #[new]
    #[pyo3(signature = (algo, seed, config=None))]
    fn new(algo: &str, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let (env, mut cfg) = configs(config)?;
        let choice = match algo {
            "mappo" => AlgoChoice::Mappo,
            "dppo" => AlgoChoice::Dppo,
            "a2c" => AlgoChoice::A2c,
            other => return Err(PyValueError::new_err(format!("unknown algo '{other}'"))),
        };
        choice.apply(&mut cfg);
        let inner = CoreTrainer::new(env, cfg, seed).map_err(py_err)?;
        Ok(Trainer { inner })
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.iteration()
    }

    /// Runs one iteration and returns its metrics.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.step().map_err(py_err)?;
        let d = metrics_dict(py, &r.metrics)?;
        d.set_item("energy_profile", r.profile.mean_kwh)?;
        d.set_item("critic_loss", r.critic_loss)?;
        Ok(d)
    }

    /// Deterministic delays of household `agent` for one encoded observation.
    fn act(&self, agent: usize, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        let set = self.inner.policies();
        if agent >= set.assignment.len() {
            return Err(PyValueError::new_err(format!("no household {agent}")));
        }
        let policy = set.policy_for(agent);
        let mean = policy.mean_action(&obs).map_err(py_err)?;
        Ok(mean.into_iter().map(|a| a.clamp(0.0, policy.max_delay())).collect())
    }

    fn save_checkpoints(&self, dir: std::path::PathBuf) -> PyResult<Vec<std::path::PathBuf>> {
        self.inner.save_checkpoints(&dir).map_err(py_err)
    }

    fn load_checkpoints(&mut self, dir: std::path::PathBuf) -> PyResult<()> {
        self.inner.load_checkpoints(&dir).map_err(py_err)
    }
}

/// Metrics of the `zero` or `random` policy over `steps` steps.
#[pyfunction]
#[pyo3(signature = (policy, steps, seed, config=None))]
fn evaluate_baseline<'py>(
    py: Python<'py>,
    policy: &str,
    steps: usize,
    seed: u64,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let (env, _) = configs(config)?;
    let m = env.n_appliances();
    let (metrics, _, _) = match policy {
        "zero" => baselines::evaluate_policy(&env, &ZeroDelay { n_appliances: m }, steps, seed, 0),
        "random" => baselines::evaluate_policy(
            &env,
            &UniformRandom {
                n_appliances: m,
                max_delay: env.step_hours,
            },
            steps,
            seed,
            0,
        ),
        other => return Err(PyValueError::new_err(format!("unknown policy '{other}'"))),
    }
    .map_err(py_err)?;
    metrics_dict(py, &metrics)
}

/// Day-ahead plans, one list of per-interval kWh per household.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn ecs_plan(config: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
    let (env, _) = configs(config)?;
    let plans = baselines::ecs_plan(&env).map_err(py_err)?;
    Ok(plans.into_iter().map(|p| p.energy).collect())
}

/// Replays the day-ahead plans against stochastic demand for `days` days.
#[pyfunction]
#[pyo3(signature = (days, seed, config=None))]
fn ecs_evaluate<'py>(py: Python<'py>, days: usize, seed: u64, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let (env, _) = configs(config)?;
    let plans = baselines::ecs_plan(&env).map_err(py_err)?;
    let ev = baselines::ecs_evaluate(&plans, &env, days, &Demand::Stochastic { seed }).map_err(py_err)?;
    let d = metrics_dict(py, &ev.metrics)?;
    d.set_item("planned_reward", ev.planned_reward)?;
    Ok(d)
}

/// PAR price of a window of aggregate energies.
#[pyfunction]
fn par_price(totals: Vec<f64>, step_hours: f64) -> f64 {
    let w = PriceWindow::from_totals(totals.len().max(1), &totals);
    pricing::par_price(&w, step_hours, gridflux::config::ParDenominator::Window)
}

#[pyfunction]
#[pyo3(signature = (ratio, advantage, clip_eps=0.2, entropy=0.0, entropy_coeff=0.0))]
fn ppo_objective(ratio: f64, advantage: f64, clip_eps: f64, entropy: f64, entropy_coeff: f64) -> f64 {
    algos::ppo_objective(ratio, advantage, clip_eps, entropy, entropy_coeff)
}

#[pyfunction]
#[pyo3(signature = (reward, v_next, v_now, gamma=0.99, done=false))]
fn advantage(reward: f64, v_next: f64, v_now: f64, gamma: f64, done: bool) -> f64 {
    algos::advantage(reward, v_next, v_now, gamma, done)
}

#[pymodule]
fn gridflux_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(evaluate_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(ecs_plan, m)?)?;
    m.add_function(wrap_pyfunction!(ecs_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(par_price, m)?)?;
    m.add_function(wrap_pyfunction!(ppo_objective, m)?)?;
    m.add_function(wrap_pyfunction!(advantage, m)?)?;
    Ok(())
}
