//! Deterministic-policy actor-critic (twin critics, target networks, target
//! policy smoothing, delayed actor updates) with a pluggable replay sampling
//! scheme.
//!
//! One update step under the cascaded scheme runs three blocks in order:
//! a uniform batch (critic with the PAL loss, then the actor, then priority
//! refresh and a target update), a prioritized batch (critic with Huber,
//! priority refresh), and an inverse prioritized batch (actor only, then a
//! target update). The inverse tree is rebuilt between the prioritized
//! priority write and the inverse sample; priorities are not updated after
//! the inverse-batch actor update. Actor and critic each consume exactly
//! `batch_size` transitions per step.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::losses::{self, LossKind};
use crate::nn::{AdamState, Gradients, Head, Matrix, Mlp};
use crate::replay::{PriorityMode, ReplayBuffer, SampleBatch};
use crate::{Error, Result};

/// Replay sampling scheme driving the update step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerScheme {
    Uniform,
    ClassicPer,
    Lap,
    /// Cascaded uniform + prioritized + inverse sampling; `lambda` is the
    /// uniformly sampled fraction of the batch budget.
    La3p { lambda: f64 },
}

impl SamplerScheme {
    pub fn from_name(name: &str, lambda: f64) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "per" | "classic_per" | "classicper" => Ok(Self::ClassicPer),
            "lap" => Ok(Self::Lap),
            "la3p" => Ok(Self::La3p { lambda }),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::ClassicPer => "per",
            Self::Lap => "lap",
            Self::La3p { .. } => "la3p",
        }
    }

    /// Buffer priority convention this scheme expects.
    pub fn priority_mode(&self) -> PriorityMode {
        match self {
            Self::ClassicPer => PriorityMode::ClassicPer,
            _ => PriorityMode::Clipped,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Symmetric action bound; the actor's tanh head scales to this.
    pub max_action: f64,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub zeta: f64,
    /// Target policy smoothing noise std, scaled by `max_action`.
    pub policy_noise: f64,
    /// Smoothing noise clip bound, scaled by `max_action`.
    pub noise_clip: f64,
    pub policy_delay: u64,
    /// Exploration noise std, scaled by `max_action`.
    pub expl_noise: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    /// Pure random exploration phase length, in environment steps.
    pub start_steps: u64,
    /// Exponent shared by the clipped prioritization and the PAL loss.
    pub pal_alpha: f64,
    pub scheme: SamplerScheme,
    /// When true, target networks refresh at both positions of the cascaded
    /// step (the literal loop); when false, once at the end.
    pub double_target_update: bool,
}

impl AgentConfig {
    /// CPU-scale defaults; the full-scale values stay reachable through the
    /// public fields.
    pub fn desk(
        state_dim: usize,
        action_dim: usize,
        max_action: f64,
        scheme: SamplerScheme,
    ) -> Self {
        Self {
            state_dim,
            action_dim,
            max_action,
            hidden: vec![64, 64],
            gamma: 0.99,
            zeta: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            expl_noise: 0.1,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            batch_size: 64,
            start_steps: 1000,
            pal_alpha: 0.4,
            scheme,
            double_target_update: true,
        }
    }
}

/// One recorded operation inside an update step, for instrumented tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceEvent {
    SampleUniform { n: usize },
    SamplePrioritized { n: usize },
    SampleInverse { n: usize },
    CriticUpdate { loss: LossKind, n: usize },
    ActorUpdate { n: usize, applied: bool },
    PriorityUpdate { n: usize },
    InverseRebuild,
    TargetUpdate,
}

pub struct Agent {
    cfg: AgentConfig,
    actor: Mlp,
    actor_target: Mlp,
    critic1: Mlp,
    critic2: Mlp,
    critic1_target: Mlp,
    critic2_target: Mlp,
    opt_actor: AdamState,
    opt_critic1: AdamState,
    opt_critic2: AdamState,
    /// Shared delay counter for both actor-update positions.
    actor_calls: u64,
    explore_steps: u64,
    updates: u64,
    trace: Option<Vec<TraceEvent>>,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: AgentConfig, rng: &mut R) -> Result<Self> {
        let mut actor_dims = vec![cfg.state_dim];
        actor_dims.extend(&cfg.hidden);
        actor_dims.push(cfg.action_dim);
        let mut critic_dims = vec![cfg.state_dim + cfg.action_dim];
        critic_dims.extend(&cfg.hidden);
        critic_dims.push(1);

        let actor = Mlp::new(&actor_dims, Head::Tanh { scale: cfg.max_action }, rng)?;
        let critic1 = Mlp::new(&critic_dims, Head::Linear, rng)?;
        let critic2 = Mlp::new(&critic_dims, Head::Linear, rng)?;
        let actor_target = actor.clone();
        let critic1_target = critic1.clone();
        let critic2_target = critic2.clone();
        let opt_actor = AdamState::new(&actor, cfg.lr_actor);
        let opt_critic1 = AdamState::new(&critic1, cfg.lr_critic);
        let opt_critic2 = AdamState::new(&critic2, cfg.lr_critic);
        Ok(Self {
            cfg,
            actor,
            actor_target,
            critic1,
            critic2,
            critic1_target,
            critic2_target,
            opt_actor,
            opt_critic1,
            opt_critic2,
            actor_calls: 0,
            explore_steps: 0,
            updates: 0,
            trace: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn critic1(&self) -> &Mlp {
        &self.critic1
    }

    pub fn critic2(&self) -> &Mlp {
        &self.critic2
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.replace(Vec::new()).unwrap_or_default()
    }

    fn record(&mut self, event: TraceEvent) {
        if let Some(t) = &mut self.trace {
            t.push(event);
        }
    }

    /// Test hook: swaps in a hand-built critic with matching shapes.
    pub fn set_critic1(&mut self, net: Mlp) -> Result<()> {
        if net.dims() != self.critic1.dims() {
            return Err(Error::ShapeMismatch("set_critic1"));
        }
        self.opt_critic1 = AdamState::new(&net, self.cfg.lr_critic);
        self.critic1 = net;
        Ok(())
    }

    /// Policy action for `state`. With `explore` set, the first
    /// `start_steps` calls return uniform random actions, and later calls
    /// add clipped Gaussian exploration noise.
    pub fn select_action<R: Rng + ?Sized>(
        &mut self,
        state: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let bound = self.cfg.max_action;
        if explore {
            self.explore_steps += 1;
            if self.explore_steps <= self.cfg.start_steps {
                return Ok((0..self.cfg.action_dim)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect());
            }
        }
        let mut action = self.actor.forward_single(state)?;
        if explore && self.cfg.expl_noise > 0.0 {
            let noise = Normal::new(0.0, self.cfg.expl_noise * bound)
                .map_err(|_| Error::NonFinite("exploration noise"))?;
            for a in &mut action {
                *a = (*a + noise.sample(rng)).clamp(-bound, bound);
            }
        }
        Ok(action)
    }

    /// TD targets `y = r + gamma (1 - done) min(Q'_1, Q'_2)(s', a')` with
    /// target policy smoothing on `a'`.
    pub fn td_targets<R: Rng + ?Sized>(
        &self,
        batch: &SampleBatch,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if batch.transitions.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let bound = self.cfg.max_action;
        let next_states = stack(batch, |t| &t.next_state)?;
        let (mut next_actions, _) = self.actor_target.forward(&next_states)?;
        if self.cfg.policy_noise > 0.0 {
            let noise = Normal::new(0.0, self.cfg.policy_noise * bound)
                .map_err(|_| Error::NonFinite("policy noise"))?;
            let clip = self.cfg.noise_clip * bound;
            for a in &mut next_actions.data {
                let eps = noise.sample(rng).clamp(-clip, clip);
                *a = (*a + eps).clamp(-bound, bound);
            }
        }
        let x = concat(&next_states, &next_actions);
        let (q1, _) = self.critic1_target.forward(&x)?;
        let (q2, _) = self.critic2_target.forward(&x)?;
        Ok(batch
            .transitions
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let not_done = if t.done { 0.0 } else { 1.0 };
                t.reward + self.cfg.gamma * not_done * q1.data[i].min(q2.data[i])
            })
            .collect())
    }

    /// Loss gradients for both critics on one batch, without applying them.
    /// Returns `(grads1, grads2, delta1, delta2)` where `delta_k = y - Q_k`.
    ///
    /// With `LossKind::Pal` the batch normalizer is taken from `pal_xi`, or
    /// computed from the per-sample `max(|delta_1|, |delta_2|)` when absent.
    pub fn critic_gradients(
        &self,
        batch: &SampleBatch,
        targets: &[f64],
        loss: LossKind,
        pal_xi: Option<f64>,
    ) -> Result<(Gradients, Gradients, Vec<f64>, Vec<f64>)> {
        let n = batch.transitions.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if targets.len() != n || batch.weights.len() != n {
            return Err(Error::ShapeMismatch("critic batch"));
        }
        let states = stack(batch, |t| &t.state)?;
        let actions = stack(batch, |t| &t.action)?;
        let x = concat(&states, &actions);
        let (q1, cache1) = self.critic1.forward(&x)?;
        let (q2, cache2) = self.critic2.forward(&x)?;
        let delta1: Vec<f64> = targets.iter().zip(&q1.data).map(|(y, q)| y - q).collect();
        let delta2: Vec<f64> = targets.iter().zip(&q2.data).map(|(y, q)| y - q).collect();
        for d in delta1.iter().chain(&delta2) {
            if !d.is_finite() {
                return Err(Error::NonFinite("critic td error"));
            }
        }
        let xi = match (loss, pal_xi) {
            (LossKind::Pal, Some(xi)) => {
                if !(xi > 0.0) {
                    return Err(Error::InvalidNormalizer(xi));
                }
                xi
            }
            (LossKind::Pal, None) => {
                let maxed: Vec<f64> = delta1
                    .iter()
                    .zip(&delta2)
                    .map(|(a, b)| a.abs().max(b.abs()))
                    .collect();
                losses::pal_xi(&maxed, self.cfg.pal_alpha)?
            }
            _ => 1.0,
        };

        // d(mean loss)/dQ_k = -w_i * L'(delta_k_i) / n.
        let mut out1 = Matrix::zeros(n, 1);
        let mut out2 = Matrix::zeros(n, 1);
        for i in 0..n {
            let w = batch.weights[i];
            let g1 = self.loss_grad(loss, delta1[i], xi)?;
            let g2 = self.loss_grad(loss, delta2[i], xi)?;
            out1.data[i] = -w * g1 / n as f64;
            out2.data[i] = -w * g2 / n as f64;
        }
        let (grads1, _) = self.critic1.backward(&cache1, &out1)?;
        let (grads2, _) = self.critic2.backward(&cache2, &out2)?;
        Ok((grads1, grads2, delta1, delta2))
    }

    fn loss_grad(&self, loss: LossKind, delta: f64, xi: f64) -> Result<f64> {
        Ok(match loss {
            LossKind::Mse => losses::mse(delta)?.1,
            LossKind::Huber1 => losses::huber(delta)?.1,
            LossKind::Pal => losses::pal(delta, xi, self.cfg.pal_alpha)?.1,
        })
    }

    /// Steps both critics on the mean per-sample loss and returns the TD
    /// errors for priority updates.
    pub fn critic_update(
        &mut self,
        batch: &SampleBatch,
        targets: &[f64],
        loss: LossKind,
        pal_xi: Option<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (g1, g2, d1, d2) = self.critic_gradients(batch, targets, loss, pal_xi)?;
        self.critic1.adam_step(&mut self.opt_critic1, &g1)?;
        self.critic2.adam_step(&mut self.opt_critic2, &g2)?;
        self.record(TraceEvent::CriticUpdate {
            loss,
            n: batch.transitions.len(),
        });
        Ok((d1, d2))
    }

    /// Gradient of the actor objective `mean_i Q_1(s_i, pi(s_i))` with the
    /// critic frozen, without applying it.
    pub fn actor_gradient(&self, batch: &SampleBatch) -> Result<Gradients> {
        let n = batch.transitions.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let states = stack(batch, |t| &t.state)?;
        let (actions, actor_cache) = self.actor.forward(&states)?;
        let x = concat(&states, &actions);
        let (_, critic_cache) = self.critic1.forward(&x)?;
        let mut dq = Matrix::zeros(n, 1);
        for v in &mut dq.data {
            *v = 1.0 / n as f64;
        }
        let dx = self.critic1.backward_input(&critic_cache, &dq)?;
        // Gradient flows only through the action columns.
        let mut da = Matrix::zeros(n, self.cfg.action_dim);
        for r in 0..n {
            da.row_mut(r)
                .copy_from_slice(&dx.row(r)[self.cfg.state_dim..]);
        }
        let (grads, _) = self.actor.backward(&actor_cache, &da)?;
        Ok(grads)
    }

    /// Ascends the actor on the mean critic value, honoring the policy
    /// delay. Returns whether the update was applied.
    pub fn actor_update(&mut self, batch: &SampleBatch) -> Result<bool> {
        self.actor_calls += 1;
        let apply = self.actor_calls % self.cfg.policy_delay == 0;
        self.record(TraceEvent::ActorUpdate {
            n: batch.transitions.len(),
            applied: apply,
        });
        if !apply {
            return Ok(false);
        }
        let mut grads = self.actor_gradient(batch)?;
        grads.scale(-1.0); // ascent
        self.actor.adam_step(&mut self.opt_actor, &grads)?;
        Ok(true)
    }

    /// Polyak-blends all three target networks toward their sources.
    pub fn polyak_targets(&mut self) -> Result<()> {
        let zeta = self.cfg.zeta;
        self.actor_target.polyak_from(&self.actor, zeta)?;
        self.critic1_target.polyak_from(&self.critic1, zeta)?;
        self.critic2_target.polyak_from(&self.critic2, zeta)?;
        self.record(TraceEvent::TargetUpdate);
        Ok(())
    }

    fn twin_priority_errors(d1: &[f64], d2: &[f64]) -> Vec<f64> {
        d1.iter().zip(d2).map(|(a, b)| a.abs().max(b.abs())).collect()
    }

    /// One update step under the configured scheme.
    pub fn update_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut ReplayBuffer,
        rng: &mut R,
    ) -> Result<()> {
        match self.cfg.scheme {
            SamplerScheme::La3p { .. } => self.la3p_update_step(buffer, rng),
            scheme => self.baseline_update_step(buffer, rng, scheme),
        }
    }

    /// The cascaded update step: uniform/PAL (critic + actor + priorities +
    /// targets), prioritized/Huber (critic + priorities), inverse (actor +
    /// targets, no priority update).
    pub fn la3p_update_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut ReplayBuffer,
        rng: &mut R,
    ) -> Result<()> {
        let lambda = match self.cfg.scheme {
            SamplerScheme::La3p { lambda } => lambda,
            _ => return Err(Error::WrongMode { required: "la3p" }),
        };
        let n = self.cfg.batch_size;
        if buffer.count() < n {
            return Err(Error::BufferUnderfull {
                count: buffer.count(),
                need: n,
            });
        }
        let n_uniform = (lambda * n as f64).round() as usize;
        let n_prioritized = n - n_uniform;

        if n_uniform > 0 {
            let batch = buffer.sample_uniform(n_uniform, rng)?;
            self.record(TraceEvent::SampleUniform { n: n_uniform });
            let targets = self.td_targets(&batch, rng)?;
            let (d1, d2) = self.critic_update(&batch, &targets, LossKind::Pal, None)?;
            self.actor_update(&batch)?;
            buffer.update_priorities(&batch.indices, &Self::twin_priority_errors(&d1, &d2))?;
            self.record(TraceEvent::PriorityUpdate { n: n_uniform });
            if self.cfg.double_target_update || n_prioritized == 0 {
                self.polyak_targets()?;
            }
        }

        if n_prioritized > 0 {
            let batch = buffer.sample_prioritized(n_prioritized, rng)?;
            self.record(TraceEvent::SamplePrioritized { n: n_prioritized });
            let targets = self.td_targets(&batch, rng)?;
            let (d1, d2) = self.critic_update(&batch, &targets, LossKind::Huber1, None)?;
            buffer.update_priorities(&batch.indices, &Self::twin_priority_errors(&d1, &d2))?;
            self.record(TraceEvent::PriorityUpdate { n: n_prioritized });

            buffer.rebuild_inverse()?;
            self.record(TraceEvent::InverseRebuild);
            let batch = buffer.sample_inverse(n_prioritized, rng)?;
            self.record(TraceEvent::SampleInverse { n: n_prioritized });
            self.actor_update(&batch)?;
            self.polyak_targets()?;
        }

        self.updates += 1;
        Ok(())
    }

    /// One update step for the uniform, classic-PER, or clip-prioritized
    /// baselines.
    pub fn baseline_update_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut ReplayBuffer,
        rng: &mut R,
        scheme: SamplerScheme,
    ) -> Result<()> {
        let n = self.cfg.batch_size;
        if buffer.count() < n {
            return Err(Error::BufferUnderfull {
                count: buffer.count(),
                need: n,
            });
        }
        match scheme {
            SamplerScheme::Uniform => {
                let batch = buffer.sample_uniform(n, rng)?;
                self.record(TraceEvent::SampleUniform { n });
                let targets = self.td_targets(&batch, rng)?;
                self.critic_update(&batch, &targets, LossKind::Mse, None)?;
                self.actor_update(&batch)?;
                self.polyak_targets()?;
            }
            SamplerScheme::ClassicPer => {
                if buffer.mode() != PriorityMode::ClassicPer {
                    return Err(Error::WrongMode {
                        required: "classic PER",
                    });
                }
                let mut batch = buffer.sample_prioritized(n, rng)?;
                self.record(TraceEvent::SamplePrioritized { n });
                batch.weights = buffer.importance_weights(&batch.indices)?;
                let targets = self.td_targets(&batch, rng)?;
                let (d1, d2) = self.critic_update(&batch, &targets, LossKind::Mse, None)?;
                buffer.update_priorities(&batch.indices, &Self::twin_priority_errors(&d1, &d2))?;
                self.record(TraceEvent::PriorityUpdate { n });
                self.actor_update(&batch)?;
                buffer.advance_beta();
                self.polyak_targets()?;
            }
            SamplerScheme::Lap => {
                if buffer.mode() != PriorityMode::Clipped {
                    return Err(Error::WrongMode { required: "clipped" });
                }
                let batch = buffer.sample_prioritized(n, rng)?;
                self.record(TraceEvent::SamplePrioritized { n });
                let targets = self.td_targets(&batch, rng)?;
                let (d1, d2) = self.critic_update(&batch, &targets, LossKind::Huber1, None)?;
                buffer.update_priorities(&batch.indices, &Self::twin_priority_errors(&d1, &d2))?;
                self.record(TraceEvent::PriorityUpdate { n });
                self.actor_update(&batch)?;
                self.polyak_targets()?;
            }
            SamplerScheme::La3p { .. } => {
                return Err(Error::WrongMode { required: "baseline" });
            }
        }
        self.updates += 1;
        Ok(())
    }
}

fn stack<F>(batch: &SampleBatch, field: F) -> Result<Matrix>
where
    F: Fn(&crate::replay::Transition) -> &[f64],
{
    let rows = batch.transitions.len();
    let cols = field(&batch.transitions[0]).len();
    let mut m = Matrix::zeros(rows, cols);
    for (r, t) in batch.transitions.iter().enumerate() {
        let f = field(t);
        if f.len() != cols {
            return Err(Error::ShapeMismatch("batch stack"));
        }
        m.row_mut(r).copy_from_slice(f);
    }
    Ok(m)
}

fn concat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
    for r in 0..a.rows {
        out.row_mut(r)[..a.cols].copy_from_slice(a.row(r));
        out.row_mut(r)[a.cols..].copy_from_slice(b.row(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Transition;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_config(scheme: SamplerScheme) -> AgentConfig {
        let mut cfg = AgentConfig::desk(2, 1, 1.0, scheme);
        cfg.hidden = vec![8, 8];
        cfg.batch_size = 4;
        cfg.start_steps = 3;
        cfg
    }

    fn make_agent(scheme: SamplerScheme, seed: u64) -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Agent::new(test_config(scheme), &mut rng).unwrap()
    }

    fn make_buffer(mode: PriorityMode, n: usize, seed: u64) -> ReplayBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = ReplayBuffer::new(64, 2, 1, mode, 0.4, 0.4, 1000, 1e-4).unwrap();
        for _ in 0..n {
            buf.push(Transition {
                state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                action: vec![rng.random_range(-1.0..1.0)],
                reward: rng.random_range(-1.0..1.0),
                next_state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                done: false,
            })
            .unwrap();
        }
        buf
    }

    fn batch_of(buf: &ReplayBuffer, indices: &[usize]) -> SampleBatch {
        SampleBatch {
            indices: indices.to_vec(),
            transitions: indices
                .iter()
                .map(|&i| buf.transition(i).unwrap().clone())
                .collect(),
            weights: vec![1.0; indices.len()],
        }
    }

    fn zero_net_params(net: &mut Mlp) {
        for i in 0..net.param_count() {
            net.set_param(i, 0.0).unwrap();
        }
    }

    #[test]
    fn targets_are_exact_copies_at_init() {
        let agent = make_agent(SamplerScheme::Uniform, 0);
        assert!(agent.actor.params_equal(&agent.actor_target));
        assert!(agent.critic1.params_equal(&agent.critic1_target));
        assert!(agent.critic2.params_equal(&agent.critic2_target));
    }

    #[test]
    fn td_targets_mask_terminals() {
        let agent = make_agent(SamplerScheme::Uniform, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = SampleBatch {
            indices: vec![0],
            transitions: vec![Transition {
                state: vec![0.1, 0.2],
                action: vec![0.3],
                reward: 1.25,
                next_state: vec![0.4, 0.5],
                done: true,
            }],
            weights: vec![1.0],
        };
        let y = agent.td_targets(&batch, &mut rng).unwrap();
        assert_eq!(y, vec![1.25]);
    }

    #[test]
    fn td_targets_reduce_to_reward_with_zero_gamma_or_zero_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = SampleBatch {
            indices: vec![0],
            transitions: vec![Transition {
                state: vec![0.1, 0.2],
                action: vec![0.3],
                reward: -0.75,
                next_state: vec![0.4, 0.5],
                done: false,
            }],
            weights: vec![1.0],
        };

        let mut cfg = test_config(SamplerScheme::Uniform);
        cfg.gamma = 0.0;
        let agent = Agent::new(cfg, &mut rng).unwrap();
        assert_eq!(agent.td_targets(&batch, &mut rng).unwrap(), vec![-0.75]);

        let mut agent = make_agent(SamplerScheme::Uniform, 4);
        zero_net_params(&mut agent.critic1_target);
        zero_net_params(&mut agent.critic2_target);
        assert_eq!(agent.td_targets(&batch, &mut rng).unwrap(), vec![-0.75]);
    }

    #[test]
    fn critic_update_is_noop_when_q_equals_target() {
        let mut agent = make_agent(SamplerScheme::Uniform, 5);
        zero_net_params(&mut agent.critic1);
        zero_net_params(&mut agent.critic2);
        let before1 = agent.critic1.clone();
        let batch = SampleBatch {
            indices: vec![0],
            transitions: vec![Transition {
                state: vec![0.1, 0.2],
                action: vec![0.3],
                reward: 0.0,
                next_state: vec![0.4, 0.5],
                done: true,
            }],
            weights: vec![1.0],
        };
        let (d1, d2) = agent
            .critic_update(&batch, &[0.0], LossKind::Mse, None)
            .unwrap();
        assert_eq!(d1, vec![0.0]);
        assert_eq!(d2, vec![0.0]);
        assert!(agent.critic1.params_equal(&before1));
    }

    #[test]
    fn critic_gradient_matches_finite_differences_through_each_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let buf = make_buffer(PriorityMode::Clipped, 8, 7);
        let batch = batch_of(&buf, &[0]);
        // Spread targets so both Huber branches get exercised.
        for (loss, xi, target) in [
            (LossKind::Mse, None, 0.4),
            (LossKind::Huber1, None, 3.0),
            (LossKind::Huber1, None, 0.2),
            (LossKind::Pal, Some(1.3), 2.5),
            (LossKind::Pal, Some(1.3), -0.6),
        ] {
            let mut agent = make_agent(SamplerScheme::Uniform, rng.random_range(0..1_000));
            let targets = vec![target];
            let (g1, _, _, _) = agent
                .critic_gradients(&batch, &targets, loss, xi)
                .unwrap();
            let h = 1e-6;
            for idx in (0..agent.critic1.param_count()).step_by(11) {
                let orig = agent.critic1.param(idx).unwrap();
                let eval = |agent: &Agent| {
                    let states = stack(&batch, |t| &t.state).unwrap();
                    let actions = stack(&batch, |t| &t.action).unwrap();
                    let x = concat(&states, &actions);
                    let (q, _) = agent.critic1.forward(&x).unwrap();
                    let delta = targets[0] - q.data[0];
                    let xi_val = xi.unwrap_or(1.0);
                    match loss {
                        LossKind::Mse => losses::mse(delta).unwrap().0,
                        LossKind::Huber1 => losses::huber(delta).unwrap().0,
                        LossKind::Pal => losses::pal(delta, xi_val, 0.4).unwrap().0,
                    }
                };
                agent.critic1.set_param(idx, orig + h).unwrap();
                let plus = eval(&agent);
                agent.critic1.set_param(idx, orig - h).unwrap();
                let minus = eval(&agent);
                agent.critic1.set_param(idx, orig).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let an = Mlp::grad_at(&g1, idx).unwrap();
                let denom = fd.abs().max(an.abs());
                if denom > 1e-7 {
                    assert!(
                        (fd - an).abs() / denom < 1e-4,
                        "{loss:?} param {idx}: fd {fd} analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn pal_with_small_errors_equals_mse_update() {
        let buf = make_buffer(PriorityMode::Clipped, 8, 8);
        let batch = batch_of(&buf, &[0, 1, 2, 3]);
        let mut a = make_agent(SamplerScheme::Uniform, 9);
        let mut b = make_agent(SamplerScheme::Uniform, 9);
        // Zero critics keep every |delta| = |y| <= 1 for small targets.
        zero_net_params(&mut a.critic1);
        zero_net_params(&mut a.critic2);
        zero_net_params(&mut b.critic1);
        zero_net_params(&mut b.critic2);
        let targets = vec![0.3, -0.2, 0.6, 0.05];
        a.critic_update(&batch, &targets, LossKind::Pal, None).unwrap();
        b.critic_update(&batch, &targets, LossKind::Mse, None).unwrap();
        assert!(a.critic1.params_equal(&b.critic1));
        assert!(a.critic2.params_equal(&b.critic2));
    }

    #[test]
    fn actor_gradient_zero_when_critic_ignores_action() {
        let mut agent = make_agent(SamplerScheme::Uniform, 10);
        zero_net_params(&mut agent.critic1);
        let buf = make_buffer(PriorityMode::Clipped, 8, 11);
        let batch = batch_of(&buf, &[0, 1]);
        let grads = agent.actor_gradient(&batch).unwrap();
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut agent = make_agent(SamplerScheme::Uniform, 12);
        let buf = make_buffer(PriorityMode::Clipped, 8, 13);
        let batch = batch_of(&buf, &[0, 1, 2]);
        let grads = agent.actor_gradient(&batch).unwrap();
        let h = 1e-6;
        let objective = |agent: &Agent| {
            let states = stack(&batch, |t| &t.state).unwrap();
            let (actions, _) = agent.actor.forward(&states).unwrap();
            let x = concat(&states, &actions);
            let (q, _) = agent.critic1.forward(&x).unwrap();
            q.data.iter().sum::<f64>() / q.data.len() as f64
        };
        for idx in (0..agent.actor.param_count()).step_by(5) {
            let orig = agent.actor.param(idx).unwrap();
            agent.actor.set_param(idx, orig + h).unwrap();
            let plus = objective(&agent);
            agent.actor.set_param(idx, orig - h).unwrap();
            let minus = objective(&agent);
            agent.actor.set_param(idx, orig).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let an = Mlp::grad_at(&grads, idx).unwrap();
            let denom = fd.abs().max(an.abs());
            if denom > 1e-7 {
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "param {idx}: fd {fd} analytic {an}"
                );
            }
        }
    }

    #[test]
    fn actor_converges_to_critic_peak() {
        // Hand-built critic Q(s, a) = -|a - 0.3| via a ReLU pair; the actor
        // should drive pi(s) toward 0.3 for every state.
        let mut cfg = test_config(SamplerScheme::Uniform);
        cfg.policy_delay = 1;
        cfg.lr_actor = 3e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut agent = Agent::new(cfg, &mut rng).unwrap();

        let mut critic = Mlp::new(&[3, 8, 8, 1], Head::Linear, &mut rng).unwrap();
        zero_net_params(&mut critic);
        let a_star = 0.3;
        // Layer 0, input layout [s0, s1, a]: unit 0 = relu(a - a*),
        // unit 1 = relu(a* - a).
        critic.set_param(2, 1.0).unwrap(); // w0[0][2]
        critic.set_param(5, -1.0).unwrap(); // w0[1][2]
        let b0 = 8 * 3;
        critic.set_param(b0, -a_star).unwrap();
        critic.set_param(b0 + 1, a_star).unwrap();
        // Layer 1 passes the two non-negative units through.
        let w1 = b0 + 8;
        critic.set_param(w1, 1.0).unwrap(); // w1[0][0]
        critic.set_param(w1 + 8 + 1, 1.0).unwrap(); // w1[1][1]
        // Head: q = -h0 - h1 = -|a - a*|.
        let head = w1 + 64 + 8;
        critic.set_param(head, -1.0).unwrap();
        critic.set_param(head + 1, -1.0).unwrap();
        agent.set_critic1(critic).unwrap();

        let buf = make_buffer(PriorityMode::Clipped, 8, 15);
        let batch = batch_of(&buf, &[0, 1, 2, 3]);
        for _ in 0..1500 {
            agent.actor_update(&batch).unwrap();
        }
        for t in &batch.transitions {
            let a = agent.actor.forward_single(&t.state).unwrap()[0];
            assert!((a - a_star).abs() < 1e-2, "pi(s) = {a}");
        }
    }

    #[test]
    fn policy_delay_skips_odd_calls() {
        let mut agent = make_agent(SamplerScheme::Uniform, 16);
        let buf = make_buffer(PriorityMode::Clipped, 8, 17);
        let batch = batch_of(&buf, &[0]);
        assert!(!agent.actor_update(&batch).unwrap());
        assert!(agent.actor_update(&batch).unwrap());
        assert!(!agent.actor_update(&batch).unwrap());
        assert!(agent.actor_update(&batch).unwrap());
    }

    #[test]
    fn select_action_contract() {
        let mut agent = make_agent(SamplerScheme::Uniform, 18);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let state = vec![0.2, -0.4];
        // First start_steps (=3) exploratory calls are uniform random.
        let r1 = agent.select_action(&state, true, &mut rng).unwrap();
        let r2 = agent.select_action(&state, true, &mut rng).unwrap();
        let r3 = agent.select_action(&state, true, &mut rng).unwrap();
        assert!(r1 != r2 || r2 != r3);
        for a in r1.iter().chain(&r2).chain(&r3) {
            assert!(a.abs() <= 1.0);
        }
        // Deterministic without exploration.
        let d1 = agent.select_action(&state, false, &mut rng).unwrap();
        let d2 = agent.select_action(&state, false, &mut rng).unwrap();
        assert_eq!(d1, d2);
        // Noisy exploration stays in bounds.
        for _ in 0..50 {
            for a in agent.select_action(&state, true, &mut rng).unwrap() {
                assert!(a.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn la3p_step_trace_order_and_budget() {
        let mut agent = make_agent(SamplerScheme::La3p { lambda: 0.5 }, 20);
        let mut buf = make_buffer(PriorityMode::Clipped, 32, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        agent.enable_trace();
        agent.la3p_update_step(&mut buf, &mut rng).unwrap();
        let trace = agent.take_trace();
        let expected = vec![
            TraceEvent::SampleUniform { n: 2 },
            TraceEvent::CriticUpdate { loss: LossKind::Pal, n: 2 },
            TraceEvent::ActorUpdate { n: 2, applied: false },
            TraceEvent::PriorityUpdate { n: 2 },
            TraceEvent::TargetUpdate,
            TraceEvent::SamplePrioritized { n: 2 },
            TraceEvent::CriticUpdate { loss: LossKind::Huber1, n: 2 },
            TraceEvent::PriorityUpdate { n: 2 },
            TraceEvent::InverseRebuild,
            TraceEvent::SampleInverse { n: 2 },
            TraceEvent::ActorUpdate { n: 2, applied: true },
            TraceEvent::TargetUpdate,
        ];
        assert_eq!(trace, expected);

        // Transition budget: critic and actor each see batch_size samples.
        let critic_n: usize = trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::CriticUpdate { n, .. } => Some(*n),
                _ => None,
            })
            .sum();
        let actor_n: usize = trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::ActorUpdate { n, .. } => Some(*n),
                _ => None,
            })
            .sum();
        assert_eq!(critic_n, 4);
        assert_eq!(actor_n, 4);
    }

    #[test]
    fn la3p_lambda_extremes() {
        // lambda = 1: only the uniform block runs.
        let mut agent = make_agent(SamplerScheme::La3p { lambda: 1.0 }, 23);
        let mut buf = make_buffer(PriorityMode::Clipped, 32, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        agent.enable_trace();
        agent.la3p_update_step(&mut buf, &mut rng).unwrap();
        let trace = agent.take_trace();
        assert_eq!(
            trace,
            vec![
                TraceEvent::SampleUniform { n: 4 },
                TraceEvent::CriticUpdate { loss: LossKind::Pal, n: 4 },
                TraceEvent::ActorUpdate { n: 4, applied: false },
                TraceEvent::PriorityUpdate { n: 4 },
                TraceEvent::TargetUpdate,
            ]
        );

        // lambda = 0: no shared uniform block at all.
        let mut agent = make_agent(SamplerScheme::La3p { lambda: 0.0 }, 26);
        let mut buf = make_buffer(PriorityMode::Clipped, 32, 27);
        agent.enable_trace();
        agent.la3p_update_step(&mut buf, &mut rng).unwrap();
        let trace = agent.take_trace();
        assert_eq!(
            trace,
            vec![
                TraceEvent::SamplePrioritized { n: 4 },
                TraceEvent::CriticUpdate { loss: LossKind::Huber1, n: 4 },
                TraceEvent::PriorityUpdate { n: 4 },
                TraceEvent::InverseRebuild,
                TraceEvent::SampleInverse { n: 4 },
                TraceEvent::ActorUpdate { n: 4, applied: false },
                TraceEvent::TargetUpdate,
            ]
        );
    }

    #[test]
    fn la3p_keeps_inverse_fresh_through_the_step() {
        let mut agent = make_agent(SamplerScheme::La3p { lambda: 0.5 }, 28);
        let mut buf = make_buffer(PriorityMode::Clipped, 32, 29);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let v0 = buf.priority_version();
        agent.la3p_update_step(&mut buf, &mut rng).unwrap();
        // The rebuild happened after the last priority write of the step.
        assert!(buf.inverse_fresh());
        assert!(buf.priority_version() > v0);
        assert_eq!(buf.inverse_version(), Some(buf.priority_version()));
    }

    #[test]
    fn swapping_uniform_and_prioritized_blocks_preserves_summed_gradient() {
        let agent = make_agent(SamplerScheme::La3p { lambda: 0.5 }, 31);
        let buf = make_buffer(PriorityMode::Clipped, 16, 32);
        let uniform = batch_of(&buf, &[0, 1, 2, 3]);
        let prioritized = batch_of(&buf, &[4, 5, 6, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let y_uni = agent.td_targets(&uniform, &mut rng).unwrap();
        let y_pri = agent.td_targets(&prioritized, &mut rng).unwrap();

        let (gu, _, _, _) = agent
            .critic_gradients(&uniform, &y_uni, LossKind::Pal, None)
            .unwrap();
        let (gp, _, _, _) = agent
            .critic_gradients(&prioritized, &y_pri, LossKind::Huber1, None)
            .unwrap();

        let mut order_a = gu.clone();
        order_a.add(&gp);
        let mut order_b = gp.clone();
        order_b.add(&gu);
        let fa = order_a.to_flat();
        let fb = order_b.to_flat();
        for (a, b) in fa.iter().zip(&fb) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn baseline_uniform_never_touches_priorities() {
        let mut agent = make_agent(SamplerScheme::Uniform, 34);
        let mut buf = make_buffer(PriorityMode::Clipped, 16, 35);
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let v0 = buf.priority_version();
        for _ in 0..3 {
            agent.update_step(&mut buf, &mut rng).unwrap();
        }
        assert_eq!(buf.priority_version(), v0);
    }

    #[test]
    fn baseline_lap_on_fresh_buffer_matches_uniform_strata() {
        let mut agent = make_agent(SamplerScheme::Lap, 37);
        let mut buf = make_buffer(PriorityMode::Clipped, 4, 38);
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        agent.enable_trace();
        agent.update_step(&mut buf, &mut rng).unwrap();
        let trace = agent.take_trace();
        assert!(matches!(trace[0], TraceEvent::SamplePrioritized { n: 4 }));
    }

    #[test]
    fn underfull_buffer_is_rejected() {
        let mut agent = make_agent(SamplerScheme::La3p { lambda: 0.5 }, 40);
        let mut buf = make_buffer(PriorityMode::Clipped, 2, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert!(matches!(
            agent.la3p_update_step(&mut buf, &mut rng),
            Err(Error::BufferUnderfull { .. })
        ));
    }

    #[test]
    fn classic_per_requires_classic_buffer() {
        let mut agent = make_agent(SamplerScheme::ClassicPer, 43);
        let mut buf = make_buffer(PriorityMode::Clipped, 16, 44);
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        assert!(matches!(
            agent.update_step(&mut buf, &mut rng),
            Err(Error::WrongMode { .. })
        ));
        let mut buf = make_buffer(PriorityMode::ClassicPer, 16, 46);
        agent.update_step(&mut buf, &mut rng).unwrap();
    }

    #[test]
    fn classic_per_with_flat_priorities_and_unit_beta_has_unit_weights() {
        let mut agent = make_agent(SamplerScheme::ClassicPer, 47);
        let mut buf = ReplayBuffer::new(8, 2, 1, PriorityMode::ClassicPer, 0.6, 1.0, 0, 1e-4)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..8 {
            buf.push(Transition {
                state: vec![0.0, 0.0],
                action: vec![0.0],
                reward: 0.0,
                next_state: vec![0.0, 0.0],
                done: false,
            })
            .unwrap();
        }
        let batch = buf.sample_prioritized(4, &mut rng).unwrap();
        let w = buf.importance_weights(&batch.indices).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        agent.update_step(&mut buf, &mut rng).unwrap();
    }

    #[test]
    fn update_steps_stay_finite_and_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for scheme in [
            SamplerScheme::Uniform,
            SamplerScheme::ClassicPer,
            SamplerScheme::Lap,
            SamplerScheme::La3p { lambda: 0.5 },
        ] {
            let mut agent = make_agent(scheme, 50);
            let mut buf = make_buffer(scheme.priority_mode(), 32, 51);
            for _ in 0..20 {
                agent.update_step(&mut buf, &mut rng).unwrap();
            }
            let a = agent.actor.forward_single(&[0.1, -0.1]).unwrap();
            assert!(a[0].is_finite() && a[0].abs() <= 1.0);
        }
    }

    #[test]
    fn la3p_lambda_rounding_splits_batch() {
        let mut agent = make_agent(SamplerScheme::La3p { lambda: 0.3 }, 52);
        let mut buf = make_buffer(PriorityMode::Clipped, 32, 53);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        agent.enable_trace();
        agent.la3p_update_step(&mut buf, &mut rng).unwrap();
        let trace = agent.take_trace();
        // round(0.3 * 4) = 1 uniform, 3 prioritized.
        assert!(trace.contains(&TraceEvent::SampleUniform { n: 1 }));
        assert!(trace.contains(&TraceEvent::SamplePrioritized { n: 3 }));
    }
}
