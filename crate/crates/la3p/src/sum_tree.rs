//! Array-backed sum-tree for proportional prioritized sampling.
//!
//! Each internal node stores the sum of its two children and the root holds
//! the total priority, so priority writes and value-to-leaf queries both run
//! in O(log capacity). Leaves are padded to a power of two; unwritten leaves
//! hold priority zero and can never be sampled.

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    padded: usize,
    /// Flat array of length `2 * padded - 1`; leaves occupy the tail.
    nodes: Vec<f64>,
    /// Number of leaves ever written (highest written index + 1).
    size: usize,
    /// Nodes touched by the most recent `set` call.
    last_set_touched: usize,
}

impl SumTree {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::ZeroCapacity);
        }
        let padded = capacity.next_power_of_two();
        Ok(Self {
            capacity,
            padded,
            nodes: vec![0.0; 2 * padded - 1],
            size: 0,
            last_set_touched: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of leaves ever written.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Sum of all leaf priorities (the root node).
    pub fn total(&self) -> f64 {
        self.nodes[0]
    }

    /// Priority stored at `index`.
    pub fn get(&self, index: usize) -> Result<f64> {
        self.check_index(index)?;
        Ok(self.nodes[self.padded - 1 + index])
    }

    /// Writes `priority` at `index` and refreshes all ancestors.
    ///
    /// Ancestors are recomputed from their children rather than patched with
    /// the leaf delta, so parent sums stay exact under arbitrarily long
    /// update sequences.
    pub fn set(&mut self, index: usize, priority: f64) -> Result<()> {
        self.check_index(index)?;
        if !priority.is_finite() || priority < 0.0 {
            return Err(Error::InvalidPriority(priority));
        }
        let mut node = self.padded - 1 + index;
        self.nodes[node] = priority;
        let mut touched = 1;
        while node > 0 {
            node = (node - 1) / 2;
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2];
            touched += 1;
        }
        self.last_set_touched = touched;
        if index + 1 > self.size {
            self.size = index + 1;
        }
        Ok(())
    }

    /// Number of nodes touched by the most recent `set`.
    pub fn last_set_touched(&self) -> usize {
        self.last_set_touched
    }

    /// Maps a value in `[0, total())` to the smallest leaf index whose prefix
    /// sum exceeds it.
    ///
    /// Descends from the root; on an exact boundary the right child is taken,
    /// so zero-priority leaves are never returned.
    pub fn find_prefix(&self, value: f64) -> Result<usize> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::EmptyTree);
        }
        if !value.is_finite() || value < 0.0 || value >= total {
            return Err(Error::ValueOutOfRange { value, total });
        }
        let mut node = 0;
        let mut remaining = value;
        while node < self.padded - 1 {
            let left = 2 * node + 1;
            let left_sum = self.nodes[left];
            if left_sum > remaining {
                node = left;
            } else {
                remaining -= left_sum;
                node = left + 1;
            }
        }
        Ok(node - (self.padded - 1))
    }

    /// Draws `n` leaves by stratified proportional sampling: `[0, total())`
    /// is split into `n` equal sub-ranges and one value is drawn uniformly
    /// from each.
    pub fn stratified_sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.total() <= 0.0 {
            return Err(Error::EmptyTree);
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let total = self.total();
        let width = total / n as f64;
        let mut indices = Vec::with_capacity(n);
        for k in 0..n {
            let lo = width * k as f64;
            let hi = if k + 1 == n { total } else { width * (k + 1) as f64 };
            let value = rng.random_range(lo..hi);
            indices.push(self.find_prefix(value)?);
        }
        Ok(indices)
    }

    /// Maximum priority over the written leaves.
    pub fn max_leaf(&self) -> Result<f64> {
        if self.size == 0 {
            return Err(Error::EmptyTree);
        }
        let leaves = &self.nodes[self.padded - 1..self.padded - 1 + self.size];
        Ok(leaves.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Overwrites all written leaves from `values` and rebuilds every
    /// internal node bottom-up in one O(padded) pass.
    pub(crate) fn rebuild_from(&mut self, values: &[f64]) -> Result<()> {
        if values.len() > self.capacity {
            return Err(Error::IndexOutOfRange {
                index: values.len() - 1,
                capacity: self.capacity,
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidPriority(v));
            }
            self.nodes[self.padded - 1 + i] = v;
        }
        for node in (0..self.padded - 1).rev() {
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2];
        }
        if values.len() > self.size {
            self.size = values.len();
        }
        Ok(())
    }

    /// Largest relative parent-vs-children discrepancy over the whole tree.
    /// Diagnostic used by the structural-invariant tests.
    pub fn parent_sum_max_rel_err(&self) -> f64 {
        let mut worst = 0.0f64;
        for node in 0..self.padded - 1 {
            let children = self.nodes[2 * node + 1] + self.nodes[2 * node + 2];
            let denom = self.nodes[node].abs().max(children.abs()).max(1e-300);
            worst = worst.max((self.nodes[node] - children).abs() / denom);
        }
        worst
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.capacity {
            return Err(Error::IndexOutOfRange {
                index,
                capacity: self.capacity,
            });
        }
        Ok(())
    }
}
