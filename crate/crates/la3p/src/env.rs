//! Deterministic, seedable toy continuous-control environments with bounded
//! action spaces: point-mass reach tasks, a pendulum swing-up, and a
//! one-step contextual bandit whose exact Q-function is available in closed
//! form for the diagnostics probes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    PointMass1d,
    PointMass2d,
    PendulumSwingUp,
    AnalyticBandit,
}

impl EnvKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "point_mass_1d" | "pointmass1d" | "point1d" => Ok(Self::PointMass1d),
            "point_mass_2d" | "pointmass2d" | "point2d" => Ok(Self::PointMass2d),
            "pendulum" | "pendulum_swing_up" | "pendulumswingup" => Ok(Self::PendulumSwingUp),
            "bandit" | "analytic_bandit" | "analyticbandit" => Ok(Self::AnalyticBandit),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PointMass1d => "point_mass_1d",
            Self::PointMass2d => "point_mass_2d",
            Self::PendulumSwingUp => "pendulum",
            Self::AnalyticBandit => "bandit",
        }
    }
}

/// Static description of an environment's spaces and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PointMass1d => Self {
                kind,
                state_dim: 2,
                action_dim: 1,
                action_low: -1.0,
                action_high: 1.0,
                max_episode_steps: 100,
            },
            EnvKind::PointMass2d => Self {
                kind,
                state_dim: 4,
                action_dim: 2,
                action_low: -1.0,
                action_high: 1.0,
                max_episode_steps: 100,
            },
            EnvKind::PendulumSwingUp => Self {
                kind,
                state_dim: 3,
                action_dim: 1,
                action_low: -2.0,
                action_high: 2.0,
                max_episode_steps: 200,
            },
            EnvKind::AnalyticBandit => Self {
                kind,
                state_dim: 2,
                action_dim: 1,
                action_low: -1.0,
                action_high: 1.0,
                max_episode_steps: 1,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

const POINT_MASS_DT: f64 = 0.1;
const PENDULUM_DT: f64 = 0.05;
const PENDULUM_G: f64 = 10.0;
const PENDULUM_MAX_SPEED: f64 = 8.0;

/// Bandit target action as a function of the context.
fn bandit_target(state: &[f64]) -> f64 {
    0.5 * (2.0 * state[0]).tanh()
}

#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    /// Internal state; for the pendulum this is (theta, omega), otherwise it
    /// equals the observation.
    internal: Vec<f64>,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
    warned_clip: bool,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        let spec = EnvSpec::for_kind(kind);
        Self {
            spec,
            internal: vec![0.0; spec.state_dim],
            steps: 0,
            done: true,
            rng: ChaCha8Rng::seed_from_u64(0),
            warned_clip: false,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn kind(&self) -> EnvKind {
        self.spec.kind
    }

    /// Starts a new episode; the initial state is a pure function of `seed`.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.steps = 0;
        self.done = false;
        match self.spec.kind {
            EnvKind::PointMass1d => {
                self.internal = vec![self.rng.random_range(-1.0..=1.0), 0.0];
            }
            EnvKind::PointMass2d => {
                self.internal = vec![
                    self.rng.random_range(-1.0..=1.0),
                    self.rng.random_range(-1.0..=1.0),
                    0.0,
                    0.0,
                ];
            }
            EnvKind::PendulumSwingUp => {
                let theta = self.rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI);
                let omega = self.rng.random_range(-1.0..=1.0);
                self.internal = vec![theta, omega, 0.0];
            }
            EnvKind::AnalyticBandit => {
                self.internal = (0..self.spec.state_dim)
                    .map(|_| self.rng.random_range(-1.0..=1.0))
                    .collect();
            }
        }
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        match self.spec.kind {
            EnvKind::PendulumSwingUp => {
                vec![self.internal[0].cos(), self.internal[0].sin(), self.internal[1]]
            }
            _ => self.internal[..self.spec.state_dim].to_vec(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if action.len() != self.spec.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.action_dim,
                got: action.len(),
            });
        }
        let mut a = action.to_vec();
        let mut clipped = false;
        for v in &mut a {
            if *v < self.spec.action_low || *v > self.spec.action_high {
                *v = v.clamp(self.spec.action_low, self.spec.action_high);
                clipped = true;
            }
        }
        if clipped && !self.warned_clip {
            eprintln!(
                "warning: action outside [{}, {}] clipped ({})",
                self.spec.action_low,
                self.spec.action_high,
                self.spec.kind.name()
            );
            self.warned_clip = true;
        }

        let reward = match self.spec.kind {
            EnvKind::PointMass1d | EnvKind::PointMass2d => {
                let half = self.internal.len() / 2;
                let mut dist2 = 0.0;
                for d in 0..half {
                    self.internal[half + d] += POINT_MASS_DT * a[d];
                    self.internal[d] += POINT_MASS_DT * self.internal[half + d];
                    dist2 += self.internal[d] * self.internal[d];
                }
                let effort: f64 = a.iter().map(|v| v * v).sum();
                -(dist2 + 0.01 * effort)
            }
            EnvKind::PendulumSwingUp => {
                let (theta, omega) = (self.internal[0], self.internal[1]);
                let torque = a[0];
                // Reward on the pre-step state, with the angle wrapped to
                // [-pi, pi].
                let angle = wrap_angle(theta);
                let reward = -(angle * angle + 0.1 * omega * omega + 0.001 * torque * torque);
                let omega_next = (omega
                    + (1.5 * PENDULUM_G * angle.sin() + 3.0 * torque) * PENDULUM_DT)
                    .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
                let theta_next = theta + omega_next * PENDULUM_DT;
                self.internal[0] = theta_next;
                self.internal[1] = omega_next;
                reward
            }
            EnvKind::AnalyticBandit => {
                let diff = a[0] - bandit_target(&self.internal);
                -diff * diff
            }
        };

        self.steps += 1;
        if self.steps >= self.spec.max_episode_steps {
            self.done = true;
        }
        Ok(StepResult {
            next_state: self.observation(),
            reward,
            done: self.done,
        })
    }

    /// Exact `Q^pi` of the one-step bandit; equals the step reward for any
    /// state-action pair.
    pub fn optimal_q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        if self.spec.kind != EnvKind::AnalyticBandit {
            return Err(Error::WrongEnvKind {
                required: "bandit",
            });
        }
        let a = action[0].clamp(self.spec.action_low, self.spec.action_high);
        let diff = a - bandit_target(state);
        Ok(-diff * diff)
    }

    /// Uniform random action over the bounded action box.
    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.spec.action_dim)
            .map(|_| rng.random_range(self.spec.action_low..=self.spec.action_high))
            .collect()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

/// Exact bandit Q-value without an env instance; the diagnostics module uses
/// this as the closed-form reference.
pub fn bandit_optimal_q(state: &[f64], action: f64) -> f64 {
    let diff = action - bandit_target(state);
    -diff * diff
}

/// Derivative of the bandit Q-value with respect to the action.
pub fn bandit_optimal_q_grad(state: &[f64], action: f64) -> f64 {
    -2.0 * (action - bandit_target(state))
}

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (theta + std::f64::consts::PI) % two_pi;
    if a < 0.0 {
        a += two_pi;
    }
    a - std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reset_is_deterministic() {
        for kind in [
            EnvKind::PointMass1d,
            EnvKind::PointMass2d,
            EnvKind::PendulumSwingUp,
            EnvKind::AnalyticBandit,
        ] {
            let mut a = Env::new(kind);
            let mut b = Env::new(kind);
            assert_eq!(a.reset(42), b.reset(42));
        }
    }

    #[test]
    fn point_mass_reset_shape() {
        let mut env = Env::new(EnvKind::PointMass1d);
        let s = env.reset(3);
        assert!((-1.0..=1.0).contains(&s[0]));
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn bandit_reset_draws_context_in_box() {
        let mut env = Env::new(EnvKind::AnalyticBandit);
        for seed in 0..50 {
            for v in env.reset(seed) {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn point_mass_at_goal_with_zero_action() {
        let mut env = Env::new(EnvKind::PointMass1d);
        env.reset(0);
        env.internal = vec![0.0, 0.0];
        let r = env.step(&[0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.next_state, vec![0.0, 0.0]);
    }

    #[test]
    fn bandit_optimum_scores_zero() {
        let mut env = Env::new(EnvKind::AnalyticBandit);
        let s = env.reset(7);
        let a = 0.5 * (2.0 * s[0]).tanh();
        let r = env.step(&[a]).unwrap();
        assert_relative_eq!(r.reward, 0.0, epsilon = 1e-15);
        assert!(r.done);
    }

    #[test]
    fn bandit_q_matches_step_reward() {
        let mut env = Env::new(EnvKind::AnalyticBandit);
        for seed in 0..100 {
            let s = env.reset(seed);
            let a = [(seed as f64 / 50.0) - 1.0];
            let q = env.optimal_q(&s, &a).unwrap();
            let r = env.step(&a).unwrap();
            assert_eq!(q, r.reward);
        }
        assert_relative_eq!(bandit_optimal_q(&[0.0, 0.3], 1.0), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn optimal_q_rejects_other_kinds() {
        let env = Env::new(EnvKind::PointMass1d);
        assert!(matches!(
            env.optimal_q(&[0.0, 0.0], &[0.0]),
            Err(Error::WrongEnvKind { .. })
        ));
    }

    #[test]
    fn step_after_done_errors() {
        let mut env = Env::new(EnvKind::AnalyticBandit);
        env.reset(1);
        env.step(&[0.0]).unwrap();
        assert!(matches!(env.step(&[0.0]), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn trajectories_are_reproducible_and_match_recompute() {
        let mut env = Env::new(EnvKind::PointMass1d);
        let s0 = env.reset(11);
        let actions = [0.5, -0.3, 1.0, 0.2, -1.0];
        let mut trajectory = Vec::new();
        for a in actions {
            trajectory.push(env.step(&[a]).unwrap());
        }

        // Straight-line recompute of the double integrator.
        let (mut pos, mut vel) = (s0[0], s0[1]);
        for (a, step) in actions.iter().zip(&trajectory) {
            vel += POINT_MASS_DT * a;
            pos += POINT_MASS_DT * vel;
            let expect_reward = -(pos * pos + 0.01 * a * a);
            assert_relative_eq!(step.next_state[0], pos, epsilon = 1e-12);
            assert_relative_eq!(step.next_state[1], vel, epsilon = 1e-12);
            assert_relative_eq!(step.reward, expect_reward, epsilon = 1e-12);
        }

        // Bit-identical on replay.
        let mut env2 = Env::new(EnvKind::PointMass1d);
        env2.reset(11);
        for (a, step) in actions.iter().zip(&trajectory) {
            let r = env2.step(&[*a]).unwrap();
            assert_eq!(r.next_state, step.next_state);
            assert_eq!(r.reward, step.reward);
        }
    }

    #[test]
    fn pendulum_dynamics_match_recompute() {
        let mut env = Env::new(EnvKind::PendulumSwingUp);
        env.reset(5);
        let (mut theta, mut omega) = (env.internal[0], env.internal[1]);
        for a in [1.0, -2.0, 0.5, 2.0] {
            let r = env.step(&[a]).unwrap();
            let angle = wrap_angle(theta);
            let expect_reward = -(angle * angle + 0.1 * omega * omega + 0.001 * a * a);
            omega = (omega + (1.5 * PENDULUM_G * angle.sin() + 3.0 * a) * PENDULUM_DT)
                .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
            theta += omega * PENDULUM_DT;
            assert_relative_eq!(r.reward, expect_reward, epsilon = 1e-12);
            assert_relative_eq!(r.next_state[0], theta.cos(), epsilon = 1e-12);
            assert_relative_eq!(r.next_state[1], theta.sin(), epsilon = 1e-12);
            assert_relative_eq!(r.next_state[2], omega, epsilon = 1e-12);
        }
    }

    #[test]
    fn rewards_are_bounded_below() {
        // Worst-case per-kind bounds implied by clipped speeds, bounded
        // actions, and the finite horizon.
        let cases = [
            (EnvKind::PendulumSwingUp, {
                let pi = std::f64::consts::PI;
                -(pi * pi + 0.1 * 64.0 + 0.001 * 4.0)
            }),
            (EnvKind::AnalyticBandit, -(1.5f64 * 1.5)),
            // |vel| <= 0.1 t, so |pos| <= 1 + 0.01 * 5050 = 51.5 per axis
            // over a 100-step episode.
            (EnvKind::PointMass1d, -(51.5f64 * 51.5 + 0.01)),
            (EnvKind::PointMass2d, -(2.0 * 51.5f64 * 51.5 + 0.02)),
        ];
        for (kind, bound) in cases {
            let mut env = Env::new(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for seed in 0..20 {
                env.reset(seed);
                loop {
                    let a = env.sample_action(&mut rng);
                    let r = env.step(&a).unwrap();
                    assert!(r.reward >= bound, "{kind:?}: {} < {bound}", r.reward);
                    if r.done {
                        break;
                    }
                }
            }
        }
    }

    #[test]
    fn done_fires_exactly_at_step_limit() {
        let mut env = Env::new(EnvKind::PointMass1d);
        env.reset(0);
        for t in 1..=100 {
            let r = env.step(&[0.0]).unwrap();
            assert_eq!(r.done, t == 100);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            EnvKind::PointMass1d,
            EnvKind::PointMass2d,
            EnvKind::PendulumSwingUp,
            EnvKind::AnalyticBandit,
        ] {
            assert_eq!(EnvKind::from_name(kind.name()).unwrap(), kind);
        }
        assert_eq!(EnvKind::from_name("Point-Mass-1D").unwrap(), EnvKind::PointMass1d);
        assert!(EnvKind::from_name("mujoco").is_err());
    }
}
