//! Discrete Doob decomposition and its verification suite.
//!
//! For a submartingale x on a grid t_0 < … < t_m the compensator is
//!
//! ```text
//! a[j] = Σ_{k<j} E(x[k+1] - x[k] | F_k)
//! ```
//!
//! and m = x - a is a martingale. On a finite space with strictly positive
//! atoms the pair (a, m) is unique pointwise, a is predictable (a[k+1] is
//! F_k-measurable) and natural (the left-endpoint pairing with every
//! martingale telescopes). This module computes the decomposition and checks
//! each of those properties independently.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{block_sums, RandomVariable};
use crate::process::{self, AdaptedProcess, Filtration, DEFAULT_TOL};

/// X = A + M with A predictable, nondecreasing, starting at 0 and M a
/// martingale.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    a: AdaptedProcess,
    m: AdaptedProcess,
}

/// Largest violation of each decomposition invariant. Zero means the
/// invariant holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InvariantViolations {
    pub starts_at_zero: f64,
    pub nondecreasing: f64,
    pub predictable: f64,
    pub martingale: f64,
    pub sums_to_source: f64,
}

impl InvariantViolations {
    pub fn max(&self) -> f64 {
        self.iter().map(|(_, v)| v).fold(0.0, f64::max)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [
            ("starts-at-zero", self.starts_at_zero),
            ("nondecreasing", self.nondecreasing),
            ("predictable", self.predictable),
            ("martingale", self.martingale),
            ("sums-to-source", self.sums_to_source),
        ]
        .into_iter()
    }

    fn first_failure(&self, tol: f64) -> Option<(&'static str, f64)> {
        self.iter().find(|(_, v)| *v > tol || v.is_nan())
    }
}

impl Decomposition {
    /// Checked constructor: rejects any pair that violates one of the five
    /// invariants by more than `tol`.
    pub fn new(x: &AdaptedProcess, a: AdaptedProcess, m: AdaptedProcess, tol: f64) -> Result<Self> {
        if !a.same_filtration(x) || !m.same_filtration(x) {
            return Err(Error::Dimension("decomposition parts live on a different filtration".into()));
        }
        let d = Self { a, m };
        if let Some((invariant, violation)) = d.violations(x).first_failure(tol) {
            return Err(Error::MalformedDecomposition { invariant, violation });
        }
        Ok(d)
    }

    pub fn compensator(&self) -> &AdaptedProcess {
        &self.a
    }

    pub fn martingale(&self) -> &AdaptedProcess {
        &self.m
    }

    pub fn into_parts(self) -> (AdaptedProcess, AdaptedProcess) {
        (self.a, self.m)
    }

    pub fn violations(&self, x: &AdaptedProcess) -> InvariantViolations {
        let a = &self.a;
        let starts_at_zero = a.row(0).iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
        let nondecreasing = a
            .values()
            .windows(2)
            .flat_map(|w| w[0].iter().zip(&w[1]).map(|(p, q)| p - q))
            .fold(0.0, f64::max);
        let sums_to_source = (0..x.time_count())
            .flat_map(|k| (0..x.atom_count()).map(move |i| (k, i)))
            .map(|(k, i)| (a.at(k, i) + self.m.at(k, i) - x.at(k, i)).abs())
            .fold(0.0, f64::max);
        InvariantViolations {
            starts_at_zero,
            nondecreasing,
            predictable: predictability_violation(a),
            martingale: process::martingale_violation(&self.m),
            sums_to_source,
        }
    }
}

/// Forward summation of conditional increments. Requires `x` to be a
/// submartingale within [`DEFAULT_TOL`].
pub fn doob_decompose(x: &AdaptedProcess) -> Result<Decomposition> {
    doob_decompose_with_tol(x, DEFAULT_TOL)
}

pub fn doob_decompose_with_tol(x: &AdaptedProcess, tol: f64) -> Result<Decomposition> {
    if let Some((step, atom, violation)) = process::submartingale_violation(x) {
        if violation < -tol {
            return Err(Error::NotSubmartingale { step, atom, violation });
        }
    }
    let a = forward_compensator(x);
    let m = x.sub(&a)?;
    Ok(Decomposition { a, m })
}

/// a[j] = Σ_{k<j} E(x[k+1] - x[k] | F_k), with no sign requirement on the
/// increments.
pub fn forward_compensator(x: &AdaptedProcess) -> AdaptedProcess {
    let drift = x.conditional_drift();
    let mut rows = Vec::with_capacity(x.time_count());
    rows.push(vec![0.0; x.atom_count()]);
    for d in &drift {
        let prev = rows.last().expect("non-empty");
        let next = prev.iter().zip(d).map(|(p, q)| p + q).collect();
        rows.push(next);
    }
    AdaptedProcess::from_raw(x.filtration().clone(), rows)
}

/// m[j] = E(x[last] - a_terminal | F_j).
pub fn martingale_part(x: &AdaptedProcess, a_terminal: &RandomVariable) -> Result<AdaptedProcess> {
    let target = RandomVariable::new(x.terminal().to_vec())?.zip_with(a_terminal, |u, v| u - v)?;
    AdaptedProcess::closure(x.filtration().clone(), &target)
}

/// Second construction of the compensator: build the martingale from the
/// terminal value first, then a = x - m.
pub fn compensator_via_martingale_part(x: &AdaptedProcess) -> Result<AdaptedProcess> {
    let a_terminal = RandomVariable::new(forward_compensator(x).terminal().to_vec())?;
    let m = martingale_part(x, &a_terminal)?;
    x.sub(&m)
}

/// Largest spread of a[k+1] over a block of F_k (and of a[0] over F_0).
pub fn predictability_violation(a: &AdaptedProcess) -> f64 {
    let f = a.filtration();
    let head = f.partition(0).max_spread(a.row(0)).map_or(0.0, |s| s.0);
    (0..a.last_index())
        .filter_map(|k| f.partition(k).max_spread(a.row(k + 1)).map(|s| s.0))
        .fold(head, f64::max)
}

pub fn is_predictable(a: &AdaptedProcess, tol: f64) -> bool {
    predictability_violation(a) <= tol
}

fn require_increasing_from_zero(a: &AdaptedProcess) -> Result<()> {
    a.check_nondecreasing(DEFAULT_TOL)?;
    let start = a.row(0).iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    if start > DEFAULT_TOL {
        return Err(Error::Domain(format!("increasing process must start at 0, |a[0]| = {start:e}")));
    }
    Ok(())
}

/// Σ_k E(n[k] (a[k+1] - a[k])): the martingale is taken at the left
/// endpoint of each interval.
pub fn natural_pairing(n: &AdaptedProcess, a: &AdaptedProcess) -> Result<f64> {
    if !n.same_filtration(a) {
        return Err(Error::Dimension("martingale and integrator live on different filtrations".into()));
    }
    let violation = process::martingale_violation(n);
    if violation > DEFAULT_TOL {
        return Err(Error::NotMartingale { violation });
    }
    a.check_nondecreasing(DEFAULT_TOL)?;
    let f = a.filtration();
    Ok((0..a.last_index())
        .map(|k| {
            let integrand: Vec<f64> = (0..a.atom_count())
                .map(|i| n.at(k, i) * (a.at(k + 1, i) - a.at(k, i)))
                .collect();
            f.mean(&integrand)
        })
        .sum())
}

/// One martingale per atom ω: n[j] = E(1_{ω} | F_j). Together they span
/// every martingale on the filtration.
pub fn martingale_basis(filtration: &Arc<Filtration>) -> Vec<AdaptedProcess> {
    let n = filtration.atom_count();
    (0..n)
        .map(|atom| {
            AdaptedProcess::closure(filtration.clone(), &RandomVariable::indicator(n, atom))
                .expect("indicator has the right length")
        })
        .collect()
}

/// Per basis martingale, |Σ_k E(n[k] Δa_k) - E(n[last] a[last])|.
///
/// The basis martingale of atom ω equals p(ω)/P(B) on the block B of F_k
/// containing ω and 0 elsewhere, so every expectation reduces to a block
/// sum that is shared by all atoms of that block.
pub fn naturality_defects(a: &AdaptedProcess) -> Result<Vec<f64>> {
    require_increasing_from_zero(a)?;
    let f = a.filtration();
    let space = f.space();
    let last = a.last_index();
    let per_step: Vec<(Vec<f64>, Vec<f64>)> = (0..last)
        .map(|k| {
            let inc: Vec<f64> = a.row(k + 1).iter().zip(a.row(k)).map(|(q, p)| q - p).collect();
            block_sums(space, &inc, f.partition(k))
        })
        .collect();
    let (terminal_sum, terminal_mass) = block_sums(space, a.terminal(), f.partition(last));
    Ok((0..a.atom_count())
        .map(|atom| {
            let p = space.prob(atom);
            let pairing: f64 = per_step
                .iter()
                .enumerate()
                .map(|(k, (sum, mass))| {
                    let b = f.partition(k).block_of(atom);
                    p / mass[b] * sum[b]
                })
                .sum();
            let b = f.partition(last).block_of(atom);
            let terminal = p / terminal_mass[b] * terminal_sum[b];
            (pairing - terminal).abs()
        })
        .collect())
}

pub fn naturality_violation(a: &AdaptedProcess) -> Result<f64> {
    Ok(naturality_defects(a)?.into_iter().fold(0.0, f64::max))
}

/// True iff the left-endpoint pairing equals E(n[last] a[last]) for every
/// martingale in the backward-closure basis.
pub fn is_natural(a: &AdaptedProcess, tol: f64) -> Result<bool> {
    Ok(naturality_violation(a)? <= tol)
}

/// Compares two decompositions of `x`. Both must be well formed; the
/// answer is whether their compensators agree pointwise within `tol`.
pub fn check_uniqueness(x: &AdaptedProcess, d1: &Decomposition, d2: &Decomposition, tol: f64) -> Result<bool> {
    for d in [d1, d2] {
        if !d.a.same_filtration(x) {
            return Err(Error::Dimension("decomposition of a different process".into()));
        }
        if let Some((invariant, violation)) = d.violations(x).first_failure(tol) {
            return Err(Error::MalformedDecomposition { invariant, violation });
        }
    }
    let gap = d1
        .a
        .values()
        .iter()
        .flatten()
        .zip(d2.a.values().iter().flatten())
        .fold(0.0, |acc: f64, (p, q)| acc.max((p - q).abs()));
    Ok(gap <= tol)
}

/// 2×2 contingency table of (predictable, natural) classifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub trials: usize,
    pub predictable_natural: usize,
    pub predictable_not_natural: usize,
    pub natural_not_predictable: usize,
    pub neither: usize,
}

impl AuditReport {
    pub fn off_diagonal_zero(&self) -> bool {
        self.predictable_not_natural == 0 && self.natural_not_predictable == 0
    }

    pub fn predictable(&self) -> usize {
        self.predictable_natural + self.predictable_not_natural
    }

    pub fn not_predictable(&self) -> usize {
        self.natural_not_predictable + self.neither
    }

    fn record(&mut self, predictable: bool, natural: bool) {
        self.trials += 1;
        match (predictable, natural) {
            (true, true) => self.predictable_natural += 1,
            (true, false) => self.predictable_not_natural += 1,
            (false, true) => self.natural_not_predictable += 1,
            (false, false) => self.neither += 1,
        }
    }
}

/// (is_predictable, is_natural) for an increasing process starting at 0.
pub fn classify(a: &AdaptedProcess, tol: f64) -> Result<(bool, bool)> {
    Ok((is_predictable(a, tol), is_natural(a, tol)?))
}

pub fn audit_processes<'a>(processes: impl IntoIterator<Item = &'a AdaptedProcess>, tol: f64) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    for a in processes {
        let (p, n) = classify(a, tol)?;
        report.record(p, n);
    }
    Ok(report)
}

/// A random nondecreasing adapted process starting at 0.
///
/// Each increment a[k+1] - a[k] is drawn as |Z| per block of F_{k+1}. A
/// fair coin decides whether the whole process is made predictable; if not,
/// each step is still made predictable with probability 1/2. A step is made
/// predictable by replacing its increment with the F_k-conditional average.
pub fn random_increasing_process<R: Rng + ?Sized>(filtration: &Arc<Filtration>, rng: &mut R) -> AdaptedProcess {
    let all_predictable = rng.random_bool(0.5);
    let n = filtration.atom_count();
    let mut rows = vec![vec![0.0; n]];
    for k in 0..filtration.last_index() {
        let next = filtration.partition(k + 1);
        let draws: Vec<f64> = (0..next.block_count())
            .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        let mut inc: Vec<f64> = (0..n).map(|i| draws[next.block_of(i)]).collect();
        if all_predictable || rng.random_bool(0.5) {
            inc = filtration.cond_exp(&inc, k);
        }
        let prev = rows.last().expect("non-empty");
        let row = prev.iter().zip(&inc).map(|(p, d)| p + d).collect();
        rows.push(row);
    }
    AdaptedProcess::from_raw(filtration.clone(), rows)
}

/// Classifies `trials` random increasing processes. Trial i draws from a
/// ChaCha8 stream seeded with `seed + i`, so the report does not depend on
/// evaluation order.
pub fn doleans_dade_audit(filtration: &Arc<Filtration>, trials: usize, seed: u64) -> AuditReport {
    let mut report = AuditReport::default();
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let a = random_increasing_process(filtration, &mut rng);
        let (p, n) = classify(&a, DEFAULT_TOL).expect("generated processes are increasing from 0");
        report.record(p, n);
    }
    report
}
