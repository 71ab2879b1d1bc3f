//! Per-step record of which datapoints a chain touched.
//!
//! A datapoint counts as used at step `t` when its index is in the subset
//! `S_t` the kernel reports for that step. The cumulative union of those
//! subsets is the complement of the data the chain has not yet looked at.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    n: usize,
    keep_sets: bool,
    step_sets: Vec<Vec<usize>>,
    step_sizes: Vec<usize>,
    cumulative_sizes: Vec<usize>,
    seen: Vec<bool>,
    covered: usize,
    access_count: u64,
}

impl UsageLedger {
    /// Ledger that retains every step set.
    pub fn new(n: usize) -> Self {
        Self::with_retention(n, true)
    }

    /// Ledger that keeps only per-step sizes and the cumulative set, for
    /// long runs where storing every `S_t` is too expensive.
    pub fn counting(n: usize) -> Self {
        Self::with_retention(n, false)
    }

    fn with_retention(n: usize, keep_sets: bool) -> Self {
        Self {
            n,
            keep_sets,
            step_sets: Vec::new(),
            step_sizes: Vec::new(),
            cumulative_sizes: Vec::new(),
            seen: vec![false; n],
            covered: 0,
            access_count: 0,
        }
    }

    /// Appends `S_t`. Duplicate indices within one step count once toward
    /// the access total.
    pub fn record(&mut self, indices: &[usize]) -> Result<()> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(Error::IndexOutOfRange { index: bad, n: self.n });
        }
        let mut set = indices.to_vec();
        set.sort_unstable();
        set.dedup();
        for &i in &set {
            if !self.seen[i] {
                self.seen[i] = true;
                self.covered += 1;
            }
        }
        self.access_count += set.len() as u64;
        self.step_sizes.push(set.len());
        self.cumulative_sizes.push(self.covered);
        if self.keep_sets {
            self.step_sets.push(set);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.step_sizes.len()
    }

    /// Retained step sets (empty for a counting ledger).
    pub fn step_sets(&self) -> &[Vec<usize>] {
        &self.step_sets
    }

    pub fn step_sizes(&self) -> &[usize] {
        &self.step_sizes
    }

    /// `|∪_{t≤s} S_t|` for `s = 1..steps`.
    pub fn cumulative_sizes(&self) -> &[usize] {
        &self.cumulative_sizes
    }

    pub fn covered(&self) -> usize {
        self.covered
    }

    pub fn is_used(&self, i: usize) -> bool {
        self.seen[i]
    }

    /// The cumulative set, sorted.
    pub fn cumulative(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.seen[i]).collect()
    }

    pub fn access_count(&self) -> u64 {
        self.access_count
    }

    /// Smallest 1-based step `s` with `|∪_{t≤s} S_t| ≥ threshold`.
    pub fn first_cover_step(&self, threshold: usize) -> Option<usize> {
        if threshold == 0 {
            return Some(0);
        }
        // cumulative sizes are nondecreasing
        let pos = self.cumulative_sizes.partition_point(|&c| c < threshold);
        (pos < self.cumulative_sizes.len()).then_some(pos + 1)
    }
}
