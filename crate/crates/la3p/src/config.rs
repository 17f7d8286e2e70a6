//! Experiment configuration: validated numeric ranges, per-scheme defaults,
//! the full-scale preset, and the flat `key = value` config-file format
//! whose keys mirror the CLI flag names.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::agent::{AgentConfig, SamplerScheme};
use crate::env::EnvKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SchemeKind {
    Uniform,
    Per,
    Lap,
    La3p,
}

impl SchemeKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "per" => Ok(Self::Per),
            "lap" => Ok(Self::Lap),
            "la3p" => Ok(Self::La3p),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Per => "per",
            Self::Lap => "lap",
            Self::La3p => "la3p",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub env: EnvKind,
    pub scheme: SchemeKind,
    pub lambda: f64,
    /// Priority exponent; `None` picks the per-scheme default (0.6 for
    /// classic PER, 0.4 for the clipped schemes).
    pub alpha: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub start_steps: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Base seed; runs use `seed .. seed + seeds`.
    pub seed: u64,
    pub seeds: usize,
    pub out: PathBuf,
    pub hidden: Vec<usize>,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub expl_noise: f64,
    pub mu: f64,
    pub double_target_update: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMass1d,
            scheme: SchemeKind::La3p,
            lambda: 0.5,
            alpha: None,
            beta: 0.4,
            gamma: 0.99,
            zeta: 0.005,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            batch: 64,
            buffer_capacity: 100_000,
            start_steps: 1000,
            total_steps: 30_000,
            eval_every: 500,
            eval_episodes: 5,
            seed: 0,
            seeds: 1,
            out: PathBuf::from("runs"),
            hidden: vec![64, 64],
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            expl_noise: 0.1,
            mu: 1e-4,
            double_target_update: true,
        }
    }
}

impl RunConfig {
    /// Switches every default to the full-scale values.
    pub fn apply_paper_scale(&mut self) {
        self.batch = 256;
        self.hidden = vec![256, 256];
        self.start_steps = 25_000;
        self.total_steps = 1_000_000;
        self.eval_every = 1000;
        self.eval_episodes = 10;
        self.buffer_capacity = 1_000_000;
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.scheme {
            SchemeKind::Per => 0.6,
            _ => 0.4,
        })
    }

    pub fn sampler_scheme(&self) -> SamplerScheme {
        match self.scheme {
            SchemeKind::Uniform => SamplerScheme::Uniform,
            SchemeKind::Per => SamplerScheme::ClassicPer,
            SchemeKind::Lap => SamplerScheme::Lap,
            SchemeKind::La3p => SamplerScheme::La3p {
                lambda: self.lambda,
            },
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        let spec = crate::env::EnvSpec::for_kind(self.env);
        AgentConfig {
            state_dim: spec.state_dim,
            action_dim: spec.action_dim,
            max_action: spec.action_high,
            hidden: self.hidden.clone(),
            gamma: self.gamma,
            zeta: self.zeta,
            policy_noise: self.policy_noise,
            noise_clip: self.noise_clip,
            policy_delay: self.policy_delay,
            expl_noise: self.expl_noise,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            batch_size: self.batch,
            start_steps: self.start_steps as u64,
            pal_alpha: self.resolved_alpha(),
            scheme: self.sampler_scheme(),
            double_target_update: self.double_target_update,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} not in [0, 1]", self.lambda));
        }
        let alpha = self.resolved_alpha();
        if !(alpha > 0.0 && alpha <= 1.0) {
            return fail(format!("alpha {alpha} not in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta {} not in [0, 1]", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return fail(format!("zeta {} not in [0, 1]", self.zeta));
        }
        if self.batch == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return fail("batch, eval-every, eval-episodes must be positive".into());
        }
        if self.seeds == 0 {
            return fail("seeds must be at least 1".into());
        }
        if self.buffer_capacity == 0 {
            return fail("buffer capacity must be positive".into());
        }
        if self.policy_delay == 0 {
            return fail("policy-delay must be at least 1".into());
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    /// Applies one `key = value` assignment; keys match the CLI flag names.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str, v: &str| {
            Error::InvalidConfig(format!("invalid {what} value '{v}'"))
        };
        match key {
            "env" => self.env = EnvKind::from_name(value)?,
            "scheme" => self.scheme = SchemeKind::from_name(value)?,
            "lambda" => {
                // A comma-separated list selects a sweep; the config keeps
                // the first value and `parse_lambdas` exposes the rest.
                let first = value.split(',').next().unwrap_or(value);
                self.lambda = first.trim().parse().map_err(|_| bad("lambda", value))?;
            }
            "alpha" => self.alpha = Some(value.parse().map_err(|_| bad("alpha", value))?),
            "beta" => self.beta = value.parse().map_err(|_| bad("beta", value))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad("gamma", value))?,
            "zeta" => self.zeta = value.parse().map_err(|_| bad("zeta", value))?,
            "lr-actor" => self.lr_actor = value.parse().map_err(|_| bad("lr-actor", value))?,
            "lr-critic" => self.lr_critic = value.parse().map_err(|_| bad("lr-critic", value))?,
            "batch" => self.batch = value.parse().map_err(|_| bad("batch", value))?,
            "buffer" => {
                self.buffer_capacity = value.parse().map_err(|_| bad("buffer", value))?
            }
            "start-steps" => {
                self.start_steps = value.parse().map_err(|_| bad("start-steps", value))?
            }
            "steps" => self.total_steps = value.parse().map_err(|_| bad("steps", value))?,
            "eval-every" => {
                self.eval_every = value.parse().map_err(|_| bad("eval-every", value))?
            }
            "eval-episodes" => {
                self.eval_episodes = value.parse().map_err(|_| bad("eval-episodes", value))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("seed", value))?,
            "seeds" => self.seeds = value.parse().map_err(|_| bad("seeds", value))?,
            "out" => self.out = PathBuf::from(value),
            "hidden" => {
                let dims: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|s| s.trim().parse()).collect();
                self.hidden = dims.map_err(|_| bad("hidden", value))?;
            }
            "policy-noise" => {
                self.policy_noise = value.parse().map_err(|_| bad("policy-noise", value))?
            }
            "noise-clip" => {
                self.noise_clip = value.parse().map_err(|_| bad("noise-clip", value))?
            }
            "policy-delay" => {
                self.policy_delay = value.parse().map_err(|_| bad("policy-delay", value))?
            }
            "expl-noise" => {
                self.expl_noise = value.parse().map_err(|_| bad("expl-noise", value))?
            }
            "mu" => self.mu = value.parse().map_err(|_| bad("mu", value))?,
            "paper-scale" => {
                if value.parse().map_err(|_| bad("paper-scale", value))? {
                    self.apply_paper_scale();
                }
            }
            "single-target-update" => {
                let single: bool = value.parse().map_err(|_| bad("single-target-update", value))?;
                self.double_target_update = !single;
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Loads assignments from a flat text file: one `key = value` per line,
    /// `#` starts a comment, blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set_key(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// Parses a `--lambda` argument that may hold one value or a comma-separated
/// sweep list.
pub fn parse_lambdas(value: &str) -> Result<Vec<f64>> {
    let parsed: std::result::Result<Vec<f64>, _> =
        value.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let lambdas =
        parsed.map_err(|_| Error::InvalidConfig(format!("invalid lambda list '{value}'")))?;
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("empty lambda list".into()));
    }
    for &l in &lambdas {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::InvalidConfig(format!("lambda {l} not in [0, 1]")));
        }
    }
    Ok(lambdas)
}
