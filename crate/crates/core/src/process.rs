//! Time grids, filtrations, adapted processes and stopping times.
//!
//! A process lives only at the times of its grid. Values are stored as a
//! (time × atom) matrix; row `k` must be measurable with respect to the
//! `k`-th partition of the filtration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{self, FiniteSpace, Partition, RandomVariable};

/// Default absolute tolerance for measurability and (sub)martingale checks.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        match (times.first(), times.last()) {
            (Some(&first), Some(&last)) if first == 0.0 && last == 1.0 => {}
            _ => return Err(Error::InvalidGrid("grid must start at 0 and end at 1".into())),
        }
        if let Some(w) = times.windows(2).find(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::InvalidGrid(format!("times not strictly increasing at {} -> {}", w[0], w[1])));
        }
        Ok(Self { times })
    }

    /// `steps + 1` equally spaced times j/steps.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("a grid needs at least one step".into()));
        }
        Self::new((0..=steps).map(|j| j as f64 / steps as f64).collect())
    }

    /// Times j/2^depth. Every dyadic rational here is exact in binary
    /// floating point, so nested grids share their common times bit-for-bit.
    pub fn dyadic(depth: u32) -> Result<Self> {
        if depth > 52 {
            return Err(Error::Domain(format!("dyadic depth {depth} exceeds f64 resolution")));
        }
        let n = 1usize << depth;
        let scale = (n as f64).recip();
        Ok(Self { times: (0..=n).map(|j| j as f64 * scale).collect() })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn last_index(&self) -> usize {
        self.times.len() - 1
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|probe| probe.total_cmp(&t)).ok()
    }

    /// True iff every time of `self` also belongs to `finer`.
    pub fn is_subgrid_of(&self, finer: &TimeGrid) -> bool {
        self.times.iter().all(|&t| finer.index_of(t).is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filtration {
    space: FiniteSpace,
    grid: TimeGrid,
    partitions: Vec<Partition>,
}

impl Filtration {
    pub fn new(space: FiniteSpace, grid: TimeGrid, partitions: Vec<Partition>) -> Result<Self> {
        if partitions.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} partitions for {} grid times",
                partitions.len(),
                grid.len()
            )));
        }
        for p in &partitions {
            if p.atom_count() != space.atom_count() {
                return Err(Error::Dimension(format!(
                    "partition over {} atoms, space has {}",
                    p.atom_count(),
                    space.atom_count()
                )));
            }
        }
        for (k, w) in partitions.windows(2).enumerate() {
            if !measure::refines(&w[0], &w[1])? {
                return Err(Error::NotRefining { index: k + 1 });
            }
        }
        Ok(Self { space, grid, partitions })
    }

    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition(&self, k: usize) -> &Partition {
        &self.partitions[k]
    }

    pub fn atom_count(&self) -> usize {
        self.space.atom_count()
    }

    pub fn time_count(&self) -> usize {
        self.grid.len()
    }

    pub fn last_index(&self) -> usize {
        self.grid.last_index()
    }

    /// The sub-filtration observed only at the times of `grid`.
    pub fn restrict(&self, grid: &TimeGrid) -> Result<Self> {
        let idx = self.grid_indices(grid)?;
        Ok(Self {
            space: self.space.clone(),
            grid: grid.clone(),
            partitions: idx.iter().map(|&i| self.partitions[i].clone()).collect(),
        })
    }

    fn grid_indices(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        grid.times()
            .iter()
            .map(|&t| {
                self.grid
                    .index_of(t)
                    .ok_or_else(|| Error::InvalidGrid(format!("time {t} is not on the filtration's grid")))
            })
            .collect()
    }

    pub(crate) fn cond_exp(&self, x: &[f64], k: usize) -> Vec<f64> {
        measure::cond_exp_slice(&self.space, x, &self.partitions[k])
    }

    pub(crate) fn mean(&self, x: &[f64]) -> f64 {
        measure::dot(&self.space, x)
    }
}

fn same(a: &Arc<Filtration>, b: &Arc<Filtration>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    filtration: Arc<Filtration>,
    values: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn new(filtration: Arc<Filtration>, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_tol(filtration, values, DEFAULT_TOL)
    }

    pub fn with_tol(filtration: Arc<Filtration>, values: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        if values.len() != filtration.time_count() {
            return Err(Error::Dimension(format!(
                "{} rows for {} grid times",
                values.len(),
                filtration.time_count()
            )));
        }
        for (k, row) in values.iter().enumerate() {
            if row.len() != filtration.atom_count() {
                return Err(Error::Dimension(format!(
                    "row {k} has {} entries, space has {} atoms",
                    row.len(),
                    filtration.atom_count()
                )));
            }
            if let Some(atom) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("value at time index {k}, atom {atom} is {}", row[atom])));
            }
            if let Some((spread, block)) = filtration.partition(k).max_spread(row) {
                if spread > tol {
                    return Err(Error::NotAdapted { time_index: k, block, spread });
                }
            }
        }
        Ok(Self { filtration, values })
    }

    pub fn from_fn(filtration: Arc<Filtration>, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..filtration.time_count())
            .map(|k| (0..filtration.atom_count()).map(|atom| f(k, atom)).collect())
            .collect();
        Self::new(filtration, values)
    }

    pub fn zeros(filtration: Arc<Filtration>) -> Self {
        let values = vec![vec![0.0; filtration.atom_count()]; filtration.time_count()];
        Self { filtration, values }
    }

    /// A deterministic process taking `path[k]` at every atom.
    pub fn deterministic(filtration: Arc<Filtration>, path: &[f64]) -> Result<Self> {
        if path.len() != filtration.time_count() {
            return Err(Error::Dimension(format!(
                "deterministic path of length {} for {} grid times",
                path.len(),
                filtration.time_count()
            )));
        }
        Self::from_fn(filtration, |k, _| path[k])
    }

    /// The Doob martingale n[j] = E(terminal | F_j).
    pub fn closure(filtration: Arc<Filtration>, terminal: &RandomVariable) -> Result<Self> {
        if terminal.len() != filtration.atom_count() {
            return Err(Error::Dimension(format!(
                "terminal variable has {} entries, space has {} atoms",
                terminal.len(),
                filtration.atom_count()
            )));
        }
        let values = (0..filtration.time_count())
            .map(|k| filtration.cond_exp(terminal.values(), k))
            .collect();
        Ok(Self { filtration, values })
    }

    pub(crate) fn from_raw(filtration: Arc<Filtration>, values: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(values.len(), filtration.time_count());
        Self { filtration, values }
    }

    pub fn filtration(&self) -> &Arc<Filtration> {
        &self.filtration
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn at(&self, k: usize, atom: usize) -> f64 {
        self.values[k][atom]
    }

    pub fn variable(&self, k: usize) -> RandomVariable {
        RandomVariable::new(self.values[k].clone()).expect("rows are finite by construction")
    }

    pub fn terminal(&self) -> &[f64] {
        &self.values[self.values.len() - 1]
    }

    pub fn time_count(&self) -> usize {
        self.values.len()
    }

    pub fn atom_count(&self) -> usize {
        self.filtration.atom_count()
    }

    pub fn last_index(&self) -> usize {
        self.values.len() - 1
    }

    pub fn same_filtration(&self, other: &Self) -> bool {
        same(&self.filtration, &other.filtration)
    }

    fn combine(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.same_filtration(other) {
            return Err(Error::Dimension("processes live on different filtrations".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(r, s)| r.iter().zip(s).map(|(&a, &b)| f(a, b)).collect())
            .collect();
        Self::new(self.filtration.clone(), values)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self.values.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect();
        Self::new(self.filtration.clone(), values)
    }

    /// The process observed only at the times of `grid`, on the matching
    /// sub-filtration.
    pub fn restrict(&self, grid: &TimeGrid) -> Result<Self> {
        let idx = self.filtration.grid_indices(grid)?;
        let filtration = Arc::new(self.filtration.restrict(grid)?);
        let values = idx.iter().map(|&i| self.values[i].clone()).collect();
        Ok(Self { filtration, values })
    }

    /// Errors with the first (step, atom) where the process decreases by more
    /// than `tol`.
    pub fn check_nondecreasing(&self, tol: f64) -> Result<()> {
        for (step, w) in self.values.windows(2).enumerate() {
            for (atom, (&a, &b)) in w[0].iter().zip(&w[1]).enumerate() {
                if b < a - tol {
                    return Err(Error::NonMonotone { step, atom, decrease: a - b });
                }
            }
        }
        Ok(())
    }

    /// E(x_{k+1} | F_k) - x_k for every step, as rows.
    pub fn conditional_drift(&self) -> Vec<Vec<f64>> {
        (0..self.last_index())
            .map(|k| {
                let inc: Vec<f64> = self.values[k + 1].iter().zip(&self.values[k]).map(|(b, a)| b - a).collect();
                self.filtration.cond_exp(&inc, k)
            })
            .collect()
    }
}

/// max_k max_ω |E(x_{k+1} | F_k) - x_k|.
pub fn martingale_violation(x: &AdaptedProcess) -> f64 {
    x.conditional_drift()
        .iter()
        .flatten()
        .fold(0.0, |acc: f64, d| acc.max(d.abs()))
}

/// The most negative conditional drift as (step, atom, drift), if any is
/// negative.
pub fn submartingale_violation(x: &AdaptedProcess) -> Option<(usize, usize, f64)> {
    let mut worst: Option<(usize, usize, f64)> = None;
    for (step, row) in x.conditional_drift().iter().enumerate() {
        for (atom, &d) in row.iter().enumerate() {
            if d < 0.0 && worst.is_none_or(|w| d < w.2) {
                worst = Some((step, atom, d));
            }
        }
    }
    worst
}

pub fn is_martingale(x: &AdaptedProcess, tol: f64) -> bool {
    martingale_violation(x) <= tol
}

pub fn is_submartingale(x: &AdaptedProcess, tol: f64) -> bool {
    submartingale_violation(x).is_none_or(|(_, _, d)| d >= -tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTime {
    filtration: Arc<Filtration>,
    time_index_of: Vec<usize>,
}

impl StoppingTime {
    /// Checked constructor: every event {τ = k} must be F_k-measurable.
    pub fn new(filtration: Arc<Filtration>, time_index_of: Vec<usize>) -> Result<Self> {
        let tau = Self::unchecked(filtration, time_index_of)?;
        if let Some(k) = tau.first_non_measurable() {
            return Err(Error::NotStoppingTime { time_index: k });
        }
        Ok(tau)
    }

    fn unchecked(filtration: Arc<Filtration>, time_index_of: Vec<usize>) -> Result<Self> {
        if time_index_of.len() != filtration.atom_count() {
            return Err(Error::Dimension(format!(
                "{} indices for {} atoms",
                time_index_of.len(),
                filtration.atom_count()
            )));
        }
        if let Some(&bad) = time_index_of.iter().find(|&&k| k > filtration.last_index()) {
            return Err(Error::Dimension(format!("time index {bad} beyond the grid")));
        }
        Ok(Self { filtration, time_index_of })
    }

    pub fn constant(filtration: Arc<Filtration>, k: usize) -> Result<Self> {
        let n = filtration.atom_count();
        Self::new(filtration, vec![k; n])
    }

    pub fn filtration(&self) -> &Arc<Filtration> {
        &self.filtration
    }

    pub fn indices(&self) -> &[usize] {
        &self.time_index_of
    }

    pub fn index_at(&self, atom: usize) -> usize {
        self.time_index_of[atom]
    }

    pub fn is_measurable(&self) -> bool {
        self.first_non_measurable().is_none()
    }

    fn first_non_measurable(&self) -> Option<usize> {
        (0..self.filtration.time_count()).find(|&k| {
            let event: Vec<f64> = self.time_index_of.iter().map(|&i| if i == k { 1.0 } else { 0.0 }).collect();
            !self.filtration.partition(k).measures(&event, 0.0)
        })
    }
}

/// Per atom, the largest grid index j with a[j] ≤ level (index 0 when even
/// a[0] exceeds the level). The result is a genuine stopping time whenever
/// `a` is predictable; for other monotone inputs measurability is not
/// guaranteed and can be queried with [`StoppingTime::is_measurable`].
pub fn crossing_time(a: &AdaptedProcess, level: f64) -> Result<StoppingTime> {
    if !(level > 0.0) || !level.is_finite() {
        return Err(Error::Domain(format!("crossing level must be positive and finite, got {level}")));
    }
    a.check_nondecreasing(DEFAULT_TOL)?;
    let idx = (0..a.atom_count())
        .map(|atom| {
            (0..a.time_count())
                .rev()
                .find(|&j| a.at(j, atom) <= level)
                .unwrap_or(0)
        })
        .collect();
    StoppingTime::unchecked(a.filtration().clone(), idx)
}

/// x_τ, evaluated atom by atom.
pub fn value_at(x: &AdaptedProcess, tau: &StoppingTime) -> Result<RandomVariable> {
    if !same(x.filtration(), tau.filtration()) {
        return Err(Error::Dimension("process and stopping time live on different filtrations".into()));
    }
    RandomVariable::new(
        tau.indices()
            .iter()
            .enumerate()
            .map(|(atom, &k)| x.at(k, atom))
            .collect(),
    )
}
