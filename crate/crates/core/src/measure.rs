//! Finite probability spaces, sub-σ-algebras as partitions, and exact
//! conditional expectation.
//!
//! On a finite sample space every sub-σ-algebra is generated by a unique
//! partition of the atoms, so conditioning reduces to probability-weighted
//! block averages. Atoms carry strictly positive mass, which makes every
//! "almost surely" statement a pointwise one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a [`FiniteSpace`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSpace {
    probs: Vec<f64>,
}

impl FiniteSpace {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Dimension("a finite space needs at least one atom".into()));
        }
        for (atom, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("probability of atom {atom} is {p}")));
            }
            if p <= 0.0 {
                return Err(Error::NonPositiveProbability { atom, prob: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Normalization { sum, tol: NORMALIZATION_TOL });
        }
        Ok(Self { probs })
    }

    pub fn uniform(atom_count: usize) -> Result<Self> {
        if atom_count == 0 {
            return Err(Error::Dimension("a finite space needs at least one atom".into()));
        }
        Self::new(vec![1.0 / atom_count as f64; atom_count])
    }

    pub fn atom_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, atom: usize) -> f64 {
        self.probs[atom]
    }
}

/// A partition of the atom set, stored canonically: blocks are numbered in
/// order of first occurrence, so two partitions generate the same σ-algebra
/// iff they compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    block_of: Vec<usize>,
    block_count: usize,
}

impl Partition {
    /// Builds a partition from arbitrary per-atom labels. Atoms sharing a
    /// label share a block.
    pub fn from_labels<L: Eq + std::hash::Hash + Clone>(labels: &[L]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidPartition("partition over zero atoms".into()));
        }
        let mut seen = std::collections::HashMap::new();
        let block_of = labels
            .iter()
            .map(|label| {
                let next = seen.len();
                *seen.entry(label.clone()).or_insert(next)
            })
            .collect();
        Ok(Self { block_of, block_count: seen.len() })
    }

    /// Builds a partition from an explicit list of blocks. Every atom in
    /// `0..atom_count` must appear in exactly one block.
    pub fn from_blocks(atom_count: usize, blocks: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec![usize::MAX; atom_count];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidPartition(format!("block {b} is empty")));
            }
            for &atom in block {
                if atom >= atom_count {
                    return Err(Error::Dimension(format!(
                        "atom {atom} out of range for {atom_count} atoms"
                    )));
                }
                if labels[atom] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("atom {atom} appears in two blocks")));
                }
                labels[atom] = b;
            }
        }
        if let Some(atom) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::InvalidPartition(format!("atom {atom} belongs to no block")));
        }
        Self::from_labels(&labels)
    }

    /// The trivial σ-algebra {∅, Ω}.
    pub fn trivial(atom_count: usize) -> Self {
        Self { block_of: vec![0; atom_count], block_count: 1 }
    }

    /// The full power set: every atom is its own block.
    pub fn discrete(atom_count: usize) -> Self {
        Self { block_of: (0..atom_count).collect(), block_count: atom_count }
    }

    pub fn atom_count(&self) -> usize {
        self.block_of.len()
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn block_of(&self, atom: usize) -> usize {
        self.block_of[atom]
    }

    pub fn labels(&self) -> &[usize] {
        &self.block_of
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.block_count];
        for (atom, &b) in self.block_of.iter().enumerate() {
            blocks[b].push(atom);
        }
        blocks
    }

    /// True iff `values` is constant on every block within `tol`.
    pub fn measures(&self, values: &[f64], tol: f64) -> bool {
        self.max_spread(values).map(|(s, _)| s <= tol).unwrap_or(true)
    }

    /// Largest within-block range of `values` together with the block where
    /// it occurs. `None` for an empty slice.
    pub(crate) fn max_spread(&self, values: &[f64]) -> Option<(f64, usize)> {
        let mut lo = vec![f64::INFINITY; self.block_count];
        let mut hi = vec![f64::NEG_INFINITY; self.block_count];
        for (atom, &v) in values.iter().enumerate() {
            let b = self.block_of[atom];
            lo[b] = lo[b].min(v);
            hi[b] = hi[b].max(v);
        }
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| h - l)
            .enumerate()
            .map(|(b, s)| (s, b))
            .fold(None, |acc, cur| match acc {
                Some(best) if best.0 >= cur.0 => Some(best),
                _ => Some(cur),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomVariable(Vec<f64>);

impl RandomVariable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value at atom {i} is {}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn constant(atom_count: usize, c: f64) -> Self {
        Self(vec![c; atom_count])
    }

    pub fn indicator(atom_count: usize, atom: usize) -> Self {
        let mut v = vec![0.0; atom_count];
        v[atom] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "random variables of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Self::new(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.0.iter().map(|&a| f(a)).collect())
    }
}

fn check_len(space: &FiniteSpace, len: usize, what: &str) -> Result<()> {
    if len != space.atom_count() {
        return Err(Error::Dimension(format!(
            "{what} has {len} entries, space has {} atoms",
            space.atom_count()
        )));
    }
    Ok(())
}

/// True iff every block of `fine` lies inside a single block of `coarse`.
pub fn refines(coarse: &Partition, fine: &Partition) -> Result<bool> {
    if coarse.atom_count() != fine.atom_count() {
        return Err(Error::Dimension(format!(
            "partitions over {} and {} atoms",
            coarse.atom_count(),
            fine.atom_count()
        )));
    }
    let mut parent = vec![usize::MAX; fine.block_count()];
    for atom in 0..fine.atom_count() {
        let fb = fine.block_of(atom);
        let cb = coarse.block_of(atom);
        match parent[fb] {
            usize::MAX => parent[fb] = cb,
            p if p != cb => return Ok(false),
            _ => {}
        }
    }
    Ok(true)
}

/// Per-block probability-weighted sums of `values`, and per-block masses.
pub(crate) fn block_sums(space: &FiniteSpace, values: &[f64], b: &Partition) -> (Vec<f64>, Vec<f64>) {
    let mut num = vec![0.0; b.block_count()];
    let mut mass = vec![0.0; b.block_count()];
    for (atom, (&p, &v)) in space.probs().iter().zip(values).enumerate() {
        let blk = b.block_of(atom);
        num[blk] += p * v;
        mass[blk] += p;
    }
    (num, mass)
}

/// E(x | σ(b)): on each block, the probability-weighted average of `x`.
pub fn cond_exp(space: &FiniteSpace, x: &RandomVariable, b: &Partition) -> Result<RandomVariable> {
    check_len(space, x.len(), "random variable")?;
    check_len(space, b.atom_count(), "partition")?;
    Ok(RandomVariable(cond_exp_slice(space, x.values(), b)))
}

pub(crate) fn cond_exp_slice(space: &FiniteSpace, x: &[f64], b: &Partition) -> Vec<f64> {
    let (num, mass) = block_sums(space, x, b);
    let means: Vec<f64> = num.iter().zip(&mass).map(|(n, m)| n / m).collect();
    (0..x.len()).map(|atom| means[b.block_of(atom)]).collect()
}

/// E(x; event) = Σ_{ω ∈ event} p(ω) x(ω).
pub fn expect(space: &FiniteSpace, x: &RandomVariable, event: &[usize]) -> Result<f64> {
    check_len(space, x.len(), "random variable")?;
    let mut total = 0.0;
    for &atom in event {
        if atom >= space.atom_count() {
            return Err(Error::Dimension(format!(
                "atom {atom} out of range for {} atoms",
                space.atom_count()
            )));
        }
        total += space.prob(atom) * x.values()[atom];
    }
    Ok(total)
}

/// E(x) over the whole space.
pub fn mean(space: &FiniteSpace, x: &RandomVariable) -> Result<f64> {
    check_len(space, x.len(), "random variable")?;
    Ok(dot(space, x.values()))
}

pub(crate) fn dot(space: &FiniteSpace, x: &[f64]) -> f64 {
    space.probs().iter().zip(x).map(|(p, v)| p * v).sum()
}

/// E(x; {pred(ω)}) without materializing the event.
pub(crate) fn expect_where(space: &FiniteSpace, x: &[f64], pred: impl Fn(usize) -> bool) -> f64 {
    space
        .probs()
        .iter()
        .zip(x)
        .enumerate()
        .filter(|(atom, _)| pred(*atom))
        .map(|(_, (p, v))| p * v)
        .sum()
}
