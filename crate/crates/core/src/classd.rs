//! Uniform-integrability diagnostics for discrete compensators.
//!
//! With a the compensator of x and τ_k = max{ j : a[j] ≤ k }, the terminal
//! compensator obeys the Markov bound
//!
//! ```text
//! P(a_1 ≥ k) ≤ E(a_1) / k = E(x_1 - x_0) / k
//! ```
//!
//! and the tail chain
//!
//! ```text
//! E(a_1; a_1 ≥ 2k)
//!   ≤ 2 E(a_1 - min(a_1, k); a_1 ≥ 2k)
//!   ≤ 2 E(a_1 - min(a_1, k))
//!   ≤ 2 E(a_1 - a_{τ_k})
//!   = 2 E(x_1 - x_{τ_k}; a_1 ≥ k).
//! ```
//!
//! The last term is reported as ε(k).

use serde::{Deserialize, Serialize};

use crate::doob::{self, predictability_violation};
use crate::error::{Error, Result};
use crate::measure::expect_where;
use crate::process::{self, crossing_time, value_at, AdaptedProcess, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovBound {
    pub lhs: f64,
    pub rhs: f64,
}

impl MarkovBound {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

/// The five terms of the tail chain at one level, plus the unrestricted
/// optional-stopping value 2E(x_1 - x_τ) which must equal terms[3].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailChain {
    pub level: f64,
    pub terms: [f64; 5],
    pub unrestricted: f64,
}

impl TailChain {
    pub fn lhs(&self) -> f64 {
        self.terms[0]
    }

    pub fn rhs(&self) -> f64 {
        self.terms[4]
    }

    /// min over consecutive pairs of (next - previous); nonnegative when the
    /// chain is nondecreasing.
    pub fn min_slack(&self) -> f64 {
        self.terms.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.min_slack() >= -tol && (self.terms[3] - self.unrestricted).abs() <= tol
    }
}

fn check_level(k: f64) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Domain(format!("level must be positive and finite, got {k}")));
    }
    Ok(())
}

/// Checks that `a` starts at 0, is predictable and that x - a is a
/// martingale: by uniqueness this is exactly "a is the compensator of x".
pub fn check_compensator(x: &AdaptedProcess, a: &AdaptedProcess, tol: f64) -> Result<()> {
    if !x.same_filtration(a) {
        return Err(Error::Consistency("process and compensator live on different filtrations".into()));
    }
    let start = a.row(0).iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let pred = predictability_violation(a);
    let mart = process::martingale_violation(&x.sub(a)?);
    if start > tol || pred > tol || mart > tol {
        return Err(Error::Consistency(format!(
            "not the compensator: |a[0]| = {start:e}, predictability {pred:e}, martingale residual {mart:e}"
        )));
    }
    Ok(())
}

/// lhs = P(a_1 ≥ k), rhs = E(x_1 - x_0) / k.
pub fn markov_bound(x: &AdaptedProcess, a: &AdaptedProcess, k: f64) -> Result<MarkovBound> {
    check_level(k)?;
    let f = x.filtration();
    let a1 = a.terminal();
    let lhs = expect_where(f.space(), &vec![1.0; a1.len()], |i| a1[i] >= k);
    let gain: Vec<f64> = x.terminal().iter().zip(x.row(0)).map(|(u, v)| u - v).collect();
    Ok(MarkovBound { lhs, rhs: f.mean(&gain) / k })
}

pub fn tail_bound(x: &AdaptedProcess, a: &AdaptedProcess, k: f64) -> Result<TailChain> {
    check_level(k)?;
    check_compensator(x, a, DEFAULT_TOL)?;
    let f = x.filtration();
    let space = f.space();
    let a1 = a.terminal();
    let tau = crossing_time(a, k)?;
    let a_tau = value_at(a, &tau)?;
    let x_tau = value_at(x, &tau)?;

    let excess: Vec<f64> = a1.iter().map(|&v| v - v.min(k)).collect();
    let a_gap: Vec<f64> = a1.iter().zip(a_tau.values()).map(|(u, v)| u - v).collect();
    let x_gap: Vec<f64> = x.terminal().iter().zip(x_tau.values()).map(|(u, v)| u - v).collect();

    let terms = [
        expect_where(space, a1, |i| a1[i] >= 2.0 * k),
        2.0 * expect_where(space, &excess, |i| a1[i] >= 2.0 * k),
        2.0 * f.mean(&excess),
        2.0 * f.mean(&a_gap),
        2.0 * expect_where(space, &x_gap, |i| a1[i] >= k),
    ];
    Ok(TailChain { level: k, terms, unrestricted: 2.0 * f.mean(&x_gap) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub levels: Vec<f64>,
    pub markov: Vec<MarkovBound>,
    pub chains: Vec<TailChain>,
    pub epsilon: Vec<f64>,
}

impl TailReport {
    pub fn markov_holds(&self, tol: f64) -> bool {
        self.markov.iter().all(|m| m.holds(tol))
    }

    pub fn chains_hold(&self, tol: f64) -> bool {
        self.chains.iter().all(|c| c.holds(tol))
    }

    pub fn epsilon_nonincreasing(&self, tol: f64) -> bool {
        self.epsilon.iter().all(|&e| e >= -tol) && self.epsilon.windows(2).all(|w| w[1] <= w[0] + tol)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.markov_holds(tol) && self.chains_hold(tol) && self.epsilon_nonincreasing(tol)
    }
}

/// Decomposes `x` and evaluates both bounds at every level. Levels must be
/// positive and strictly increasing.
pub fn epsilon_profile(x: &AdaptedProcess, levels: &[f64]) -> Result<TailReport> {
    let a = doob::doob_decompose(x)?.into_parts().0;
    profile_with_compensator(x, &a, levels)
}

pub fn profile_with_compensator(x: &AdaptedProcess, a: &AdaptedProcess, levels: &[f64]) -> Result<TailReport> {
    for &k in levels {
        check_level(k)?;
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("levels must be strictly increasing".into()));
    }
    let markov = levels.iter().map(|&k| markov_bound(x, a, k)).collect::<Result<Vec<_>>>()?;
    let chains = levels.iter().map(|&k| tail_bound(x, a, k)).collect::<Result<Vec<_>>>()?;
    let epsilon = chains.iter().map(TailChain::rhs).collect();
    Ok(TailReport { levels: levels.to_vec(), markov, chains, epsilon })
}
