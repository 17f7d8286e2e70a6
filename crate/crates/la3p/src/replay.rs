//! Transition storage with four sampling schemes: uniform, classic PER,
//! clip-prioritized (LAP), and inverse prioritized, plus the matching
//! priority maintenance rules.
//!
//! Two priority conventions coexist, selected by [`PriorityMode`]:
//!
//! * `ClassicPer` stores raw `|delta|` per slot and keeps sum-tree leaves at
//!   `|delta|^alpha + mu`, so sampling follows the smoothed proportional
//!   scheme and importance weights undo the induced distribution shift.
//! * `Clipped` keeps leaves at `max(|delta|^alpha, 1)`; no importance
//!   correction is used and no transition's probability can fall to zero.
//!
//! The inverse tree holds `max_j p_j / p_i` per written slot. It is rebuilt
//! on demand and guarded by a version counter: sampling from a tree that is
//! out of date with respect to any priority write is an error rather than a
//! silent rebuild, so update-ordering bugs surface in tests.

use std::io::Write;

use rand::Rng;

use crate::sum_tree::SumTree;
use crate::{Error, Result};

/// One experience tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Which priority convention the buffer maintains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorityMode {
    ClassicPer,
    Clipped,
}

/// A sampled mini-batch. `weights` are importance-sampling ratios for
/// classic PER and exactly 1.0 everywhere else.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    storage: Vec<Transition>,
    /// Last known `|delta|` per slot (1.0 for never-updated slots).
    abs_delta: Vec<f64>,
    priorities: SumTree,
    inverse: SumTree,
    mode: PriorityMode,
    alpha: f64,
    mu: f64,
    p_init: f64,
    beta0: f64,
    beta_steps: usize,
    beta_t: usize,
    write_head: usize,
    count: usize,
    priority_version: u64,
    inverse_version: Option<u64>,
}

impl ReplayBuffer {
    /// `beta_steps` is the annealing horizon over which the importance
    /// exponent ramps linearly from `beta0` to 1 (classic PER only).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        capacity: usize,
        state_dim: usize,
        action_dim: usize,
        mode: PriorityMode,
        alpha: f64,
        beta0: f64,
        beta_steps: usize,
        mu: f64,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::ZeroCapacity);
        }
        if !(0.0 < alpha && alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} not in (0, 1]")));
        }
        if !(0.0..=1.0).contains(&beta0) {
            return Err(Error::InvalidConfig(format!("beta {beta0} not in [0, 1]")));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            storage: Vec::with_capacity(capacity),
            abs_delta: vec![1.0; capacity],
            priorities: SumTree::new(capacity)?,
            inverse: SumTree::new(capacity)?,
            mode,
            alpha,
            mu,
            p_init: 1.0,
            beta0,
            beta_steps,
            beta_t: 0,
            write_head: 0,
            count: 0,
            priority_version: 0,
            inverse_version: None,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> PriorityMode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn total_priority(&self) -> f64 {
        self.priorities.total()
    }

    /// Raw priority currently stored for slot `i` (the sum-tree leaf).
    pub fn priority(&self, i: usize) -> Result<f64> {
        self.priorities.get(i)
    }

    pub fn inverse_priority(&self, i: usize) -> Result<f64> {
        self.inverse.get(i)
    }

    pub fn transition(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    /// Version counter incremented by every priority write.
    pub fn priority_version(&self) -> u64 {
        self.priority_version
    }

    /// Version of the priorities the inverse tree was last built from.
    pub fn inverse_version(&self) -> Option<u64> {
        self.inverse_version
    }

    pub fn inverse_fresh(&self) -> bool {
        self.inverse_version == Some(self.priority_version)
    }

    /// Current importance-sampling exponent under the linear schedule.
    pub fn beta(&self) -> f64 {
        if self.beta_steps == 0 || self.beta_t >= self.beta_steps {
            return 1.0;
        }
        self.beta0 + (1.0 - self.beta0) * self.beta_t as f64 / self.beta_steps as f64
    }

    /// Advances the annealing schedule by one update step.
    pub fn advance_beta(&mut self) {
        self.beta_t = self.beta_t.saturating_add(1);
    }

    /// Stores a transition at the write head with initial priority
    /// `p_init = 1`, overwriting the oldest entry once full.
    pub fn push(&mut self, transition: Transition) -> Result<()> {
        if transition.state.len() != self.state_dim
            || transition.next_state.len() != self.state_dim
        {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                got: transition.state.len().max(transition.next_state.len()),
            });
        }
        if transition.action.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim,
                got: transition.action.len(),
            });
        }
        let slot = self.write_head;
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[slot] = transition;
        }
        self.abs_delta[slot] = 1.0;
        self.priorities.set(slot, self.p_init)?;
        self.priority_version += 1;
        self.write_head = (self.write_head + 1) % self.capacity;
        self.count = (self.count + 1).min(self.capacity);
        Ok(())
    }

    /// `n` indices drawn i.i.d. uniformly over the stored transitions.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleBatch> {
        if self.count == 0 {
            return Err(Error::EmptyBuffer);
        }
        let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.count)).collect();
        Ok(self.batch_from(indices))
    }

    /// Classic-PER probability vector over all stored transitions,
    /// `(|delta_i|^alpha + mu) / sum_j (|delta_j|^alpha + mu)`.
    pub fn per_probabilities(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::EmptyBuffer);
        }
        if self.mode != PriorityMode::ClassicPer {
            return Err(Error::WrongMode {
                required: "classic PER",
            });
        }
        let mut probs: Vec<f64> = self.abs_delta[..self.count]
            .iter()
            .map(|d| d.powf(self.alpha) + self.mu)
            .collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Ok(probs)
    }

    /// Normalized importance-sampling weights for the given indices:
    /// `w_i = ((1/|R|) (1/p_i))^beta / max_j ((1/|R|) (1/p_j))^beta`, with
    /// the max over all stored transitions.
    pub fn importance_weights(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let probs = self.per_probabilities()?;
        let beta = self.beta();
        let min_p = probs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.count {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    capacity: self.count,
                });
            }
            weights.push((min_p / probs[i]).powf(beta));
        }
        Ok(weights)
    }

    /// Stratified proportional sampling on the stored priorities.
    pub fn sample_prioritized<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<SampleBatch> {
        if self.count == 0 {
            return Err(Error::EmptyBuffer);
        }
        let indices = self.priorities.stratified_sample(n, rng)?;
        Ok(self.batch_from(indices))
    }

    /// Recomputes the inverse tree as `max_j p_j / p_i` for every stored
    /// slot. The normalizing sums in the inverse scheme cancel, so only raw
    /// priorities enter. Costs O(capacity).
    pub fn rebuild_inverse(&mut self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::EmptyBuffer);
        }
        let max = self.priorities.max_leaf()?;
        let mut values = Vec::with_capacity(self.count);
        for i in 0..self.count {
            values.push(max / self.priorities.get(i)?);
        }
        self.inverse.rebuild_from(&values)?;
        self.inverse_version = Some(self.priority_version);
        Ok(())
    }

    /// Stratified sampling proportional to inverse priority. Requires a
    /// fresh inverse tree.
    pub fn sample_inverse<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleBatch> {
        if self.count == 0 {
            return Err(Error::EmptyBuffer);
        }
        if !self.inverse_fresh() {
            return Err(Error::StaleInverse);
        }
        let indices = self.inverse.stratified_sample(n, rng)?;
        Ok(self.batch_from(indices))
    }

    /// Writes fresh priorities for the given slots from their TD errors:
    /// `max(|delta|^alpha, 1)` under the clipped scheme, `|delta|^alpha + mu`
    /// under classic PER. Marks the inverse tree stale.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::ShapeMismatch("update_priorities"));
        }
        for (&i, &delta) in indices.iter().zip(td_errors) {
            if !delta.is_finite() {
                return Err(Error::NonFiniteTdError(delta));
            }
            if i >= self.count {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    capacity: self.count,
                });
            }
            let a = delta.abs();
            let leaf = match self.mode {
                PriorityMode::Clipped => a.powf(self.alpha).max(1.0),
                PriorityMode::ClassicPer => a.powf(self.alpha) + self.mu,
            };
            self.priorities.set(i, leaf)?;
            self.abs_delta[i] = a;
            self.priority_version += 1;
        }
        Ok(())
    }

    /// CSV dump of per-slot sampling state, columns
    /// `index,abs_delta,raw_priority,inverse_priority`.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,abs_delta,raw_priority,inverse_priority")?;
        for i in 0..self.count {
            writeln!(
                w,
                "{},{},{},{}",
                i,
                self.abs_delta[i],
                self.priorities.get(i)?,
                self.inverse.get(i)?
            )?;
        }
        Ok(())
    }

    fn batch_from(&self, indices: Vec<usize>) -> SampleBatch {
        let transitions = indices.iter().map(|&i| self.storage[i].clone()).collect();
        let weights = vec![1.0; indices.len()];
        SampleBatch {
            indices,
            transitions,
            weights,
        }
    }
}
