//! Recombining lattices: Markov chains indexed by (step, node) rather than
//! by path, so that exact compensators stay computable on fine grids.
//!
//! The lattice Doob decomposition only needs the one-step conditional
//! increment mean at every node. When that mean is the same for every node
//! of a step, the compensator is a deterministic function of time; this is
//! the only case the lattice engine accepts (path-dependent compensators
//! need the path-space engine in [`crate::doob`]).

use crate::error::{Error, Result};
use crate::process::TimeGrid;

/// Upper bound on node visits for one lattice computation.
pub const NODE_BUDGET: u64 = 200_000_000;

/// Truncated-mass budget per unit of expected jumps for the Poisson lattice.
pub const POISSON_TAIL: f64 = 1e-12;

pub trait MarkovLattice {
    fn grid(&self) -> &TimeGrid;
    fn node_count(&self, step: usize) -> usize;
    fn value(&self, step: usize, node: usize) -> f64;
    /// Successor nodes at `step + 1` with their transition probabilities.
    fn successors(&self, step: usize, node: usize, out: &mut Vec<(usize, f64)>);
}

/// Symmetric ±√Δt walk on a uniform grid, observed through `f`.
pub struct WalkLattice {
    grid: TimeGrid,
    h: f64,
    f: fn(f64) -> f64,
}

impl WalkLattice {
    pub fn new(grid: TimeGrid, f: fn(f64) -> f64) -> Result<Self> {
        let dt = grid.times()[1];
        let uniform = grid.times().windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-15);
        if !uniform {
            return Err(Error::Model("walk lattice needs a uniform grid".into()));
        }
        Ok(Self { grid, h: dt.sqrt(), f })
    }
}

impl MarkovLattice for WalkLattice {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn node_count(&self, step: usize) -> usize {
        step + 1
    }

    fn value(&self, step: usize, node: usize) -> f64 {
        (self.f)((2.0 * node as f64 - step as f64) * self.h)
    }

    fn successors(&self, _step: usize, node: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((node, 0.5));
        out.push((node + 1, 0.5));
    }
}

/// A single-node lattice carrying x_t = t.
pub struct DriftLattice {
    grid: TimeGrid,
}

impl DriftLattice {
    pub fn new(grid: TimeGrid) -> Self {
        Self { grid }
    }
}

impl MarkovLattice for DriftLattice {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn node_count(&self, _step: usize) -> usize {
        1
    }

    fn value(&self, step: usize, _node: usize) -> f64 {
        self.grid.times()[step]
    }

    fn successors(&self, _step: usize, _node: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
    }
}

/// Poisson counting process: node = count. Each step's jump count follows
/// Poisson(rate·Δt) truncated where the dropped mass falls below
/// `POISSON_TAIL · min(1, rate·Δt)`, then renormalized.
pub struct PoissonLattice {
    grid: TimeGrid,
    /// Per step: truncated, renormalized jump-count pmf.
    pmfs: Vec<Vec<f64>>,
    /// Per step: largest reachable count.
    max_count: Vec<usize>,
}

/// Truncated Poisson(mu) pmf and the mass it drops.
pub fn truncated_poisson(mu: f64) -> (Vec<f64>, f64) {
    let budget = POISSON_TAIL * mu.min(1.0);
    let mut pmf = vec![(-mu).exp()];
    loop {
        let n = pmf.len();
        // tail beyond n-1, summed until terms vanish
        let mut term = pmf[n - 1] * mu / n as f64;
        let mut tail = 0.0;
        let mut j = n;
        while term > 0.0 && (term > tail * 1e-17 || j < n + 3) {
            tail += term;
            j += 1;
            term *= mu / j as f64;
        }
        if tail < budget {
            let kept: f64 = pmf.iter().sum();
            return (pmf.iter().map(|p| p / kept).collect(), tail);
        }
        pmf.push(pmf[n - 1] * mu / n as f64);
    }
}

impl PoissonLattice {
    pub fn new(grid: TimeGrid, rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0 && rate <= 500.0) {
            return Err(Error::Model(format!("poisson lattice rate must be in (0, 500], got {rate}")));
        }
        let pmfs: Vec<Vec<f64>> = grid
            .times()
            .windows(2)
            .map(|w| truncated_poisson(rate * (w[1] - w[0])).0)
            .collect();
        let mut max_count = vec![0];
        for p in &pmfs {
            max_count.push(max_count.last().unwrap() + p.len() - 1);
        }
        Ok(Self { grid, pmfs, max_count })
    }
}

impl MarkovLattice for PoissonLattice {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn node_count(&self, step: usize) -> usize {
        self.max_count[step] + 1
    }

    fn value(&self, _step: usize, node: usize) -> f64 {
        node as f64
    }

    fn successors(&self, step: usize, node: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.extend(self.pmfs[step].iter().enumerate().map(|(n, &p)| (node + n, p)));
    }
}

/// Deterministic compensator of a lattice process, one value per grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeCompensator {
    pub values: Vec<f64>,
    /// Largest spread of the conditional increment mean across the nodes of
    /// one step.
    pub max_node_spread: f64,
}

pub fn lattice_compensator(lattice: &dyn MarkovLattice, tol: f64) -> Result<LatticeCompensator> {
    let steps = lattice.grid().steps();
    let mut work: u64 = 0;
    let mut succ = Vec::new();
    for j in 0..steps {
        lattice.successors(j, 0, &mut succ);
        work += lattice.node_count(j) as u64 * succ.len() as u64;
    }
    if work > NODE_BUDGET {
        return Err(Error::Resource(format!(
            "lattice needs {work} node visits, budget is {NODE_BUDGET}"
        )));
    }
    let mut values = Vec::with_capacity(steps + 1);
    values.push(0.0);
    let mut max_node_spread: f64 = 0.0;
    for j in 0..steps {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        // the middle node is the least exposed to cancellation for walks
        let mid = lattice.node_count(j) / 2;
        let mut representative = 0.0;
        for node in 0..lattice.node_count(j) {
            lattice.successors(j, node, &mut succ);
            let here = lattice.value(j, node);
            let drift: f64 = succ.iter().map(|&(s, p)| p * (lattice.value(j + 1, s) - here)).sum();
            if node == mid {
                representative = drift;
            }
            lo = lo.min(drift);
            hi = hi.max(drift);
        }
        let drift = representative;
        let spread = hi - lo;
        max_node_spread = max_node_spread.max(spread);
        if spread > tol * (1.0 + drift.abs()) {
            return Err(Error::Model(format!(
                "conditional increment mean depends on the state at step {j} (spread {spread:e}); the lattice engine needs state-independent drift"
            )));
        }
        if lo < -tol {
            return Err(Error::NotSubmartingale { step: j, atom: 0, violation: lo });
        }
        values.push(values[j] + drift);
    }
    Ok(LatticeCompensator { values, max_node_spread })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_poisson_budget() {
        for mu in [1.0, 0.25, 1.0 / 1024.0, 30.0] {
            let (pmf, tail) = truncated_poisson(mu);
            assert!(tail < POISSON_TAIL * mu.min(1.0));
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let mean: f64 = pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            assert!((mean - mu).abs() < 1e-11 * mu.max(1.0), "mu {mu}: mean {mean}");
        }
    }

    #[test]
    fn walk_squared_compensator_is_time() {
        let l = WalkLattice::new(TimeGrid::dyadic(6).unwrap(), |s| s * s).unwrap();
        let a = lattice_compensator(&l, 1e-10).unwrap();
        for (v, t) in a.values.iter().zip(l.grid().times()) {
            assert!((v - t).abs() < 1e-12);
        }
    }

    #[test]
    fn walk_cubed_is_rejected() {
        // E(Δ(S³) | S) = 3 S h² depends on the state
        let l = WalkLattice::new(TimeGrid::dyadic(3).unwrap(), |s| s * s * s).unwrap();
        assert!(matches!(lattice_compensator(&l, 1e-10), Err(Error::Model(_))));
    }

    #[test]
    fn poisson_compensator_is_linear() {
        let l = PoissonLattice::new(TimeGrid::dyadic(5).unwrap(), 2.0).unwrap();
        let a = lattice_compensator(&l, 1e-10).unwrap();
        for (v, t) in a.values.iter().zip(l.grid().times()) {
            assert!((v - 2.0 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let l = WalkLattice::new(TimeGrid::dyadic(16).unwrap(), |s| s * s).unwrap();
        assert!(matches!(lattice_compensator(&l, 1e-10), Err(Error::Resource(_))));
    }
}
