//! Python bindings for the main types and operations: the sum tree, the
//! replay buffer with its four sampling schemes, the corrected losses, the
//! MLP approximator, the toy environments, the actor-critic agent, and a
//! one-call training helper.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use la3p::agent::{Agent, AgentConfig, SamplerScheme};
use la3p::config::{RunConfig, SchemeKind};
use la3p::env::{Env, EnvKind};
use la3p::nn::{Head, Mlp};
use la3p::replay::{PriorityMode, ReplayBuffer, Transition};
use la3p::{harness, losses};

fn err(e: la3p::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "SumTree")]
struct PySumTree {
    inner: la3p::SumTree,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PySumTree {
    #[new]
    #[pyo3(signature = (capacity, seed = 0))]
    fn new(capacity: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: la3p::SumTree::new(capacity).map_err(err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn set(&mut self, index: usize, priority: f64) -> PyResult<()> {
        self.inner.set(index, priority).map_err(err)
    }

    fn get(&self, index: usize) -> PyResult<f64> {
        self.inner.get(index).map_err(err)
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    fn size(&self) -> usize {
        self.inner.size()
    }

    fn max_leaf(&self) -> PyResult<f64> {
        self.inner.max_leaf().map_err(err)
    }

    fn find_prefix(&self, value: f64) -> PyResult<usize> {
        self.inner.find_prefix(value).map_err(err)
    }

    fn stratified_sample(&mut self, n: usize) -> PyResult<Vec<usize>> {
        self.inner.stratified_sample(n, &mut self.rng).map_err(err)
    }
}

#[pyclass(name = "ReplayBuffer")]
struct PyReplayBuffer {
    inner: ReplayBuffer,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyReplayBuffer {
    #[new]
    #[pyo3(signature = (
        capacity, state_dim, action_dim, mode = "clipped", alpha = 0.4,
        beta = 0.4, beta_steps = 100_000, mu = 1e-4, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        capacity: usize,
        state_dim: usize,
        action_dim: usize,
        mode: &str,
        alpha: f64,
        beta: f64,
        beta_steps: usize,
        mu: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let mode = match mode {
            "clipped" | "lap" => PriorityMode::Clipped,
            "classic" | "per" => PriorityMode::ClassicPer,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown priority mode '{other}' (expected 'clipped' or 'classic')"
                )))
            }
        };
        Ok(Self {
            inner: ReplayBuffer::new(
                capacity, state_dim, action_dim, mode, alpha, beta, beta_steps, mu,
            )
            .map_err(err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    #[pyo3(signature = (state, action, reward, next_state, done = false))]
    fn push(
        &mut self,
        state: Vec<f64>,
        action: Vec<f64>,
        reward: f64,
        next_state: Vec<f64>,
        done: bool,
    ) -> PyResult<()> {
        self.inner
            .push(Transition {
                state,
                action,
                reward,
                next_state,
                done,
            })
            .map_err(err)
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn total_priority(&self) -> f64 {
        self.inner.total_priority()
    }

    fn priority(&self, i: usize) -> PyResult<f64> {
        self.inner.priority(i).map_err(err)
    }

    fn inverse_priority(&self, i: usize) -> PyResult<f64> {
        self.inner.inverse_priority(i).map_err(err)
    }

    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    fn advance_beta(&mut self) {
        self.inner.advance_beta()
    }

    fn sample_uniform(&mut self, n: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let b = self.inner.sample_uniform(n, &mut self.rng).map_err(err)?;
        Ok((b.indices, b.weights))
    }

    fn sample_prioritized(&mut self, n: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let b = self
            .inner
            .sample_prioritized(n, &mut self.rng)
            .map_err(err)?;
        Ok((b.indices, b.weights))
    }

    fn sample_inverse(&mut self, n: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let b = self.inner.sample_inverse(n, &mut self.rng).map_err(err)?;
        Ok((b.indices, b.weights))
    }

    fn rebuild_inverse(&mut self) -> PyResult<()> {
        self.inner.rebuild_inverse().map_err(err)
    }

    fn update_priorities(&mut self, indices: Vec<usize>, td_errors: Vec<f64>) -> PyResult<()> {
        self.inner
            .update_priorities(&indices, &td_errors)
            .map_err(err)
    }

    fn per_probabilities(&self) -> PyResult<Vec<f64>> {
        self.inner.per_probabilities().map_err(err)
    }

    fn importance_weights(&self, indices: Vec<usize>) -> PyResult<Vec<f64>> {
        self.inner.importance_weights(&indices).map_err(err)
    }

    fn transition(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>, f64, Vec<f64>, bool)> {
        let t = self
            .inner
            .transition(i)
            .ok_or_else(|| PyValueError::new_err(format!("no transition at index {i}")))?;
        Ok((
            t.state.clone(),
            t.action.clone(),
            t.reward,
            t.next_state.clone(),
            t.done,
        ))
    }

    fn dump_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| err(la3p::Error::Io(e)))?;
        self.inner.dump_csv(file).map_err(err)
    }
}

#[pyclass(name = "Env")]
struct PyEnv {
    inner: Env,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(kind: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Env::new(EnvKind::from_name(kind).map_err(err)?),
        })
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool)> {
        let r = self.inner.step(&action).map_err(err)?;
        Ok((r.next_state, r.reward, r.done))
    }

    fn optimal_q(&self, state: Vec<f64>, action: Vec<f64>) -> PyResult<f64> {
        self.inner.optimal_q(&state, &action).map_err(err)
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.spec().state_dim
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.spec().action_dim
    }

    #[getter]
    fn action_low(&self) -> f64 {
        self.inner.spec().action_low
    }

    #[getter]
    fn action_high(&self) -> f64 {
        self.inner.spec().action_high
    }

    #[getter]
    fn max_episode_steps(&self) -> usize {
        self.inner.spec().max_episode_steps
    }
}

#[pyclass(name = "Mlp")]
struct PyMlp {
    inner: Mlp,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (dims, head = "linear", scale = 1.0, seed = 0))]
    fn new(dims: Vec<usize>, head: &str, scale: f64, seed: u64) -> PyResult<Self> {
        let head = match head {
            "linear" => Head::Linear,
            "tanh" => Head::Tanh { scale },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown head '{other}' (expected 'linear' or 'tanh')"
                )))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: Mlp::new(&dims, head, &mut rng).map_err(err)?,
        })
    }

    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward_single(&input).map_err(err)
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_snapshot(path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Mlp::load_snapshot(path).map_err(err)?,
        })
    }
}

#[pyclass(name = "Agent")]
struct PyAgent {
    inner: Agent,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyAgent {
    #[new]
    #[pyo3(signature = (
        state_dim, action_dim, max_action, scheme = "la3p", uniform_fraction = 0.5,
        batch_size = 64, hidden = vec![64, 64], start_steps = 1000,
        alpha = 0.4, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        state_dim: usize,
        action_dim: usize,
        max_action: f64,
        scheme: &str,
        uniform_fraction: f64,
        batch_size: usize,
        hidden: Vec<usize>,
        start_steps: u64,
        alpha: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let scheme = SamplerScheme::from_name(scheme, uniform_fraction).map_err(err)?;
        let mut cfg = AgentConfig::desk(state_dim, action_dim, max_action, scheme);
        cfg.batch_size = batch_size;
        cfg.hidden = hidden;
        cfg.start_steps = start_steps;
        cfg.pal_alpha = alpha;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: Agent::new(cfg, &mut rng).map_err(err)?,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED),
        })
    }

    #[pyo3(signature = (state, explore = false))]
    fn select_action(&mut self, state: Vec<f64>, explore: bool) -> PyResult<Vec<f64>> {
        self.inner
            .select_action(&state, explore, &mut self.rng)
            .map_err(err)
    }

    fn update(&mut self, buffer: &mut PyReplayBuffer) -> PyResult<()> {
        self.inner
            .update_step(&mut buffer.inner, &mut self.rng)
            .map_err(err)
    }

    fn updates(&self) -> u64 {
        self.inner.updates()
    }

    fn save_actor(&self, path: &str) -> PyResult<()> {
        self.inner.actor().save_snapshot(path).map_err(err)
    }
}

#[pyfunction]
fn huber(delta: f64) -> PyResult<(f64, f64)> {
    losses::huber(delta).map_err(err)
}

#[pyfunction]
fn mse(delta: f64) -> PyResult<(f64, f64)> {
    losses::mse(delta).map_err(err)
}

#[pyfunction]
fn pal(delta: f64, xi: f64, alpha: f64) -> PyResult<(f64, f64)> {
    losses::pal(delta, xi, alpha).map_err(err)
}

#[pyfunction]
fn pal_xi(deltas: Vec<f64>, alpha: f64) -> PyResult<f64> {
    losses::pal_xi(&deltas, alpha).map_err(err)
}

#[pyfunction]
fn expected_gradient_identity(deltas: Vec<f64>, alpha: f64) -> PyResult<(f64, f64)> {
    losses::expected_gradient_identity_check(&deltas, alpha).map_err(err)
}

#[pyfunction]
fn bias_condition(rho: f64, alpha: f64, beta: f64) -> f64 {
    losses::bias_condition(rho, alpha, beta)
}

/// Trains one seed end to end and returns `(step, mean_return)` evaluation
/// pairs.
#[pyfunction]
#[pyo3(signature = (
    env, scheme = "la3p", uniform_fraction = 0.5, steps = 10_000, start_steps = 1000,
    batch = 64, eval_every = 1000, eval_episodes = 3, seed = 0,
    hidden = vec![64, 64]
))]
#[allow(clippy::too_many_arguments)]
fn train_run(
    env: &str,
    scheme: &str,
    uniform_fraction: f64,
    steps: usize,
    start_steps: usize,
    batch: usize,
    eval_every: usize,
    eval_episodes: usize,
    seed: u64,
    hidden: Vec<usize>,
) -> PyResult<Vec<(usize, f64)>> {
    let mut cfg = RunConfig::default();
    cfg.env = EnvKind::from_name(env).map_err(err)?;
    cfg.scheme = SchemeKind::from_name(scheme).map_err(err)?;
    cfg.lambda = uniform_fraction;
    cfg.total_steps = steps;
    cfg.start_steps = start_steps;
    cfg.batch = batch;
    cfg.eval_every = eval_every;
    cfg.eval_episodes = eval_episodes;
    cfg.hidden = hidden;
    cfg.buffer_capacity = steps.max(1);
    let result = harness::train_single(&cfg, seed).map_err(err)?;
    Ok(result
        .records
        .into_iter()
        .map(|r| (r.step, r.mean_return))
        .collect())
}

#[pymodule]
fn la3p_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySumTree>()?;
    m.add_class::<PyReplayBuffer>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(huber, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(pal, m)?)?;
    m.add_function(wrap_pyfunction!(pal_xi, m)?)?;
    m.add_function(wrap_pyfunction!(expected_gradient_identity, m)?)?;
    m.add_function(wrap_pyfunction!(bias_condition, m)?)?;
    m.add_function(wrap_pyfunction!(train_run, m)?)?;
    Ok(())
}
