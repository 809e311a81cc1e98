//! Path-space binary trees: the finite filtered spaces used throughout the
//! exact layer.
//!
//! Atom ω encodes a path of coin flips. The flip at step i (1-based) is bit
//! `steps - i` of ω, with 1 meaning "up", so the information available after
//! k steps is the prefix `ω >> (steps - k)`. Blocks come out already in
//! canonical order.

use std::sync::Arc;

use crate::measure::{FiniteSpace, Partition};
use crate::process::{AdaptedProcess, Filtration, TimeGrid};

/// Largest tree that is enumerated path by path (4096 atoms).
pub const MAX_TREE_STEPS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryTree {
    pub steps: usize,
    pub up_prob: f64,
}

impl BinaryTree {
    pub fn new(steps: usize, up_prob: f64) -> Self {
        Self { steps, up_prob }
    }

    pub fn symmetric(steps: usize) -> Self {
        Self::new(steps, 0.5)
    }

    pub fn atom_count(&self) -> usize {
        1 << self.steps
    }

    /// +1 for an up move at `step` (1-based), -1 for a down move.
    pub fn flip(&self, atom: usize, step: usize) -> f64 {
        if (atom >> (self.steps - step)) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.atom_count())
            .map(|atom| {
                let ups = atom.count_ones() as i32;
                let downs = self.steps as i32 - ups;
                self.up_prob.powi(ups) * (1.0 - self.up_prob).powi(downs)
            })
            .collect()
    }

    /// Partition generated by the first `k` flips.
    pub fn partition(&self, k: usize) -> Partition {
        let shift = self.steps - k;
        Partition::from_labels(&(0..self.atom_count()).map(|a| a >> shift).collect::<Vec<_>>())
            .expect("non-empty atom set")
    }

    /// The natural filtration on the uniform grid j/steps.
    ///
    /// Panics if `steps` is zero or `up_prob` is not strictly inside (0, 1).
    pub fn filtration(&self) -> Arc<Filtration> {
        let grid = TimeGrid::uniform(self.steps).expect("steps >= 1");
        self.filtration_on(grid)
    }

    pub fn filtration_on(&self, grid: TimeGrid) -> Arc<Filtration> {
        assert_eq!(grid.steps(), self.steps, "grid must have one time per step");
        let space = FiniteSpace::new(self.probs()).expect("up_prob strictly inside (0, 1)");
        let parts = (0..=self.steps).map(|k| self.partition(k)).collect();
        Arc::new(Filtration::new(space, grid, parts).expect("prefix partitions refine"))
    }

    /// Position of the walk after `k` steps of size `step_size`.
    pub fn walk_value(&self, atom: usize, k: usize, step_size: f64) -> f64 {
        (1..=k).map(|i| self.flip(atom, i)).sum::<f64>() * step_size
    }

    pub fn walk(&self, filtration: Arc<Filtration>, step_size: f64) -> AdaptedProcess {
        AdaptedProcess::from_fn(filtration, |k, atom| self.walk_value(atom, k, step_size))
            .expect("walk is adapted to the prefix filtration")
    }
}
